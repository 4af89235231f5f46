//! File formats, process plumbing, and the `pruner-zero` command line.
//!
//! Everything numeric lives in `pruner-zero-core`; this crate only adds
//! what needs an operating system: bundle/mask files, search logs,
//! external evaluator processes, and thread-parallel reconstruction.

pub mod app;
pub mod bundle_file;
pub mod catalog_file;
pub mod csv_out;
pub mod external;
pub mod log_file;
pub mod mask_file;
pub mod recon;
