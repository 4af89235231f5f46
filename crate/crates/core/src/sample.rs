//! Random generation of shape-valid expression trees.
//!
//! Trees are drawn with the classic grow/full pair of methods: `Full` puts
//! an operation at every node above the target depth so every path bottoms
//! out exactly there; `Grow` lets interior nodes terminate early (leaves
//! occupy 3 of the 20 primitive slots at each eligible position). A whole
//! candidate is rejected and redrawn when its depth leaves the requested
//! range or its root is not a matrix, so every returned tree passes
//! `shape_check`.
//!
//! The draw order is fixed and documented so seeded runs are reproducible:
//! per attempt, first the method coin (for [`random_tree`]), then the target
//! depth, then node draws in depth-first preorder, children left to right.
//! An `X` leaf directly under a unary operation is excluded from the draw
//! itself: leaves below a unary parent sample uniformly from `{W, G}`,
//! everywhere else from `{W, G, X}`.

use core::fmt;

use rand::Rng;

use crate::expr::{shape_check, ExprTree, Leaf, OpKind};

/// How node positions are filled during generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowMethod {
    /// Interior positions may terminate early in a leaf.
    Grow,
    /// Every position above the target depth is an operation.
    Full,
}

/// Attempts per call before giving up. Hitting this with the stock
/// vocabulary is effectively impossible; it guards against degenerate
/// custom setups (e.g. a vocabulary that cannot produce a matrix root).
pub const SAMPLE_RETRY_LIMIT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExhaustedRetries;

impl fmt::Display for ExhaustedRetries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "could not draw a shape-valid tree in {} attempts",
            SAMPLE_RETRY_LIMIT
        )
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ExhaustedRetries {}

/// Draws a shape-valid tree with depth in `[depth_min, depth_max]`.
///
/// Each attempt flips the grow/full coin, draws a target depth uniformly
/// from the range, builds, and keeps the result iff its depth lands in the
/// range and its root is a matrix. Panics if the bounds are malformed.
pub fn random_tree<R: Rng>(
    rng: &mut R,
    depth_min: usize,
    depth_max: usize,
) -> Result<ExprTree, ExhaustedRetries> {
    assert!(
        1 <= depth_min && depth_min <= depth_max,
        "bad depth range [{}, {}]",
        depth_min,
        depth_max
    );
    for _ in 0..SAMPLE_RETRY_LIMIT {
        let method = if rng.gen_bool(0.5) {
            GrowMethod::Grow
        } else {
            GrowMethod::Full
        };
        let target = rng.gen_range(depth_min..=depth_max);
        let tree = build(rng, method, target);
        if accept(&tree, depth_min, depth_max) {
            return Ok(tree);
        }
    }
    Err(ExhaustedRetries)
}

/// Like [`random_tree`] but with the method and target depth fixed by the
/// caller; used by ramped population initialization.
pub fn random_tree_shaped<R: Rng>(
    rng: &mut R,
    method: GrowMethod,
    target: usize,
    depth_min: usize,
    depth_max: usize,
) -> Result<ExprTree, ExhaustedRetries> {
    assert!(
        1 <= depth_min && depth_min <= target && target <= depth_max,
        "target {} outside [{}, {}]",
        target,
        depth_min,
        depth_max
    );
    for _ in 0..SAMPLE_RETRY_LIMIT {
        let tree = build(rng, method, target);
        if accept(&tree, depth_min, depth_max) {
            return Ok(tree);
        }
    }
    Err(ExhaustedRetries)
}

fn accept(tree: &ExprTree, depth_min: usize, depth_max: usize) -> bool {
    let d = tree.depth();
    depth_min <= d && d <= depth_max && shape_check(tree).is_ok()
}

fn build<R: Rng>(rng: &mut R, method: GrowMethod, target: usize) -> ExprTree {
    gen_node(rng, method, 1, target, false)
}

fn gen_node<R: Rng>(
    rng: &mut R,
    method: GrowMethod,
    level: usize,
    target: usize,
    parent_unary: bool,
) -> ExprTree {
    let make_leaf = if level >= target {
        true
    } else if method == GrowMethod::Full || level == 1 {
        // Full trees and any root shallower than target must keep growing.
        false
    } else {
        rng.gen_range(0..20) < 3
    };
    if make_leaf {
        let leaf = if parent_unary {
            [Leaf::W, Leaf::G][rng.gen_range(0..2)]
        } else {
            Leaf::ALL[rng.gen_range(0..3)]
        };
        return ExprTree::Leaf(leaf);
    }
    let op = OpKind::ALL[rng.gen_range(0..OpKind::ALL.len())];
    if op.arity() == 1 {
        let child = gen_node(rng, method, level + 1, target, true);
        ExprTree::Unary(op, alloc::boxed::Box::new(child))
    } else {
        let left = gen_node(rng, method, level + 1, target, false);
        let right = gen_node(rng, method, level + 1, target, false);
        ExprTree::Binary(op, alloc::boxed::Box::new(left), alloc::boxed::Box::new(right))
    }
}
