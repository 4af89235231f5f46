//! Core machinery for searching symbolic pruning metrics over layer
//! statistics.
//!
//! A pruning metric is an expression tree over three leaves — the weight
//! matrix `W`, the accumulated gradient matrix `G`, and the calibration
//! activation norm vector `X` — built from a fixed 17-operation vocabulary.
//! Evaluating a tree on one layer yields a saliency matrix; sorting saliency
//! per row (or per N:M group) yields a sparsity mask; the mask's
//! reconstruction error on calibration activations scores the metric.
//! An evolutionary loop searches the space of trees for metrics that prune
//! well, with opposing-operation simplification (OOS) collapsing redundant
//! candidates before they are scored.
//!
//! This crate is `no_std`-compatible (`--no-default-features --features
//! libm`); everything that touches the filesystem, clocks, or child
//! processes lives in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("pruner-zero-core needs either the `std` or the `libm` feature for float math");

pub mod analysis;
pub mod bundle;
pub mod evolve;
pub mod expr;
pub mod fitness;
pub mod math;
pub mod matrix;
pub mod prune;
pub mod sample;
pub mod simplify;

pub use expr::{ExprTree, Leaf, OpKind, ShapeClass};
pub use matrix::Matrix;
