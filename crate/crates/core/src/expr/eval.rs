//! Vectorized evaluation of expression trees on one layer's statistics.
//!
//! Element-wise arithmetic runs in f32 (matching the storage format);
//! reductions — norms, means, standard deviations — accumulate in f64 and
//! cast back. Every partial operation is totalized so evaluation never
//! faults on a domain edge:
//!
//! * `log(x) = ln(|x| + eps)`
//! * `sqrt(x) = sqrt(|x|)`
//! * `div(a, b) = a / (sign(b) * max(|b|, eps))` with `sign(0) = +1`
//! * `mms` / `zsn` with a span or standard deviation below `eps` yield all
//!   zeros instead of dividing by ~0.
//!
//! Overflow to infinity is still possible (e.g. nested `exp`); that is not
//! an error — the output carries a `finite` flag callers can consult.

use alloc::vec::Vec;

use crate::expr::{shape_check, ExprTree, Leaf, OpKind, ShapeError};
use crate::math;
use crate::matrix::Matrix;
use crate::prune::LayerStats;

/// Knobs for the totalized operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafeMathConfig {
    /// Guard added to logs and denominators, and the degeneracy threshold
    /// for `mms` / `zsn`.
    pub epsilon: f32,
    /// Scale `mms` and `zsn` per row instead of over the whole tensor.
    /// Off by default; whole-tensor scaling is what the search uses.
    pub per_row_scaling: bool,
}

impl Default for SafeMathConfig {
    fn default() -> SafeMathConfig {
        SafeMathConfig {
            epsilon: 1e-8,
            per_row_scaling: false,
        }
    }
}

/// Saliency matrix plus a flag telling whether every entry is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub values: Matrix,
    /// True iff every output entry is finite. Non-finite saliency is
    /// reported here rather than as an error.
    pub finite: bool,
}

enum Value {
    M(Matrix),
    R(Vec<f32>),
}

impl Value {
    fn map(self, f: impl Fn(f32) -> f32) -> Value {
        match self {
            Value::M(m) => Value::M(m.map(f)),
            Value::R(v) => Value::R(v.into_iter().map(f).collect()),
        }
    }
}

/// Evaluates `tree` into a `rows x cols` saliency matrix.
///
/// The only possible error is a shape violation (row-vector root), which is
/// checked up front; numeric edge cases are absorbed by the safe-math rules
/// and the `finite` flag. Evaluation is sequential and bit-deterministic.
pub fn evaluate(
    tree: &ExprTree,
    stats: &LayerStats,
    cfg: &SafeMathConfig,
) -> Result<EvalOutput, ShapeError> {
    shape_check(tree)?;
    let values = match eval_node(tree, stats, cfg) {
        Value::M(m) => m,
        // Shape check guarantees a matrix root.
        Value::R(_) => unreachable!("shape-checked tree evaluated to a row vector"),
    };
    let finite = values.is_finite();
    Ok(EvalOutput { values, finite })
}

fn eval_node(tree: &ExprTree, stats: &LayerStats, cfg: &SafeMathConfig) -> Value {
    match tree {
        ExprTree::Leaf(Leaf::W) => Value::M(stats.w().clone()),
        ExprTree::Leaf(Leaf::G) => Value::M(stats.g().clone()),
        ExprTree::Leaf(Leaf::X) => Value::R(stats.xnorm().to_vec()),
        ExprTree::Unary(op, c) => apply_unary(*op, eval_node(c, stats, cfg), cfg),
        ExprTree::Binary(op, l, r) => apply_binary(
            *op,
            eval_node(l, stats, cfg),
            eval_node(r, stats, cfg),
            cfg,
        ),
    }
}

fn apply_unary(op: OpKind, v: Value, cfg: &SafeMathConfig) -> Value {
    let eps = cfg.epsilon;
    match op {
        OpKind::Sqr | OpKind::Pow => v.map(|x| x * x),
        OpKind::Neg => v.map(|x| -x),
        OpKind::Abs => v.map(math::abs32),
        OpKind::Log => v.map(move |x| math::ln32(math::abs32(x) + eps)),
        OpKind::Exp => v.map(math::exp32),
        OpKind::Sqrt => v.map(|x| math::sqrt32(math::abs32(x))),
        OpKind::Tanh => v.map(math::tanh32),
        OpKind::Skp => v,
        OpKind::Mms => scale_op(v, cfg, min_max_scale),
        OpKind::Zsn => scale_op(v, cfg, z_score),
        OpKind::Norm1 => column_reduce(v, |acc, x| acc + math::abs64(x as f64), |s| s),
        OpKind::Norm2 => column_reduce(v, |acc, x| acc + x as f64 * x as f64, math::sqrt64),
        _ => unreachable!("binary op in unary position"),
    }
}

/// Applies a whole-slice normalization either globally or per row.
fn scale_op(v: Value, cfg: &SafeMathConfig, f: fn(&mut [f32], f32)) -> Value {
    match v {
        Value::M(mut m) => {
            if cfg.per_row_scaling {
                let cols = m.cols();
                for r in 0..m.rows() {
                    let data = m.data_mut();
                    f(&mut data[r * cols..(r + 1) * cols], cfg.epsilon);
                }
            } else {
                f(m.data_mut(), cfg.epsilon);
            }
            Value::M(m)
        }
        Value::R(mut v) => {
            f(&mut v, cfg.epsilon);
            Value::R(v)
        }
    }
}

/// Min-max scaling into `[0, 1]`; a span below `eps` yields all zeros.
fn min_max_scale(data: &mut [f32], eps: f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &x in data.iter() {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    let span = hi - lo;
    if !(span >= eps) {
        // Degenerate (constant input) or NaN-poisoned span.
        for x in data.iter_mut() {
            *x = if x.is_nan() { *x } else { 0.0 };
        }
        return;
    }
    for x in data.iter_mut() {
        *x = (*x - lo) / span;
    }
}

/// Z-score normalization; a standard deviation below `eps` yields all
/// zeros. Mean and deviation accumulate in f64 (population variance).
fn z_score(data: &mut [f32], eps: f32) {
    let n = data.len() as f64;
    let mean = data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = math::sqrt64(var) as f32;
    let mean = mean as f32;
    if !(std >= eps) {
        for x in data.iter_mut() {
            *x = if x.is_nan() { *x } else { 0.0 };
        }
        return;
    }
    for x in data.iter_mut() {
        *x = (*x - mean) / std;
    }
}

/// Column-wise reduction: a matrix collapses to a row vector of per-column
/// reductions; a row vector reduces to a scalar that is replicated back to
/// its own length (so `norm2(X)` is the l2 norm of `X` in every slot).
fn column_reduce(v: Value, fold: fn(f64, f32) -> f64, finish: fn(f64) -> f64) -> Value {
    match v {
        Value::M(m) => {
            let mut acc = alloc::vec![0.0f64; m.cols()];
            for r in 0..m.rows() {
                for (j, &x) in m.row(r).iter().enumerate() {
                    acc[j] = fold(acc[j], x);
                }
            }
            Value::R(acc.into_iter().map(|s| finish(s) as f32).collect())
        }
        Value::R(v) => {
            let mut acc = 0.0f64;
            for &x in &v {
                acc = fold(acc, x);
            }
            let s = finish(acc) as f32;
            Value::R(alloc::vec![s; v.len()])
        }
    }
}

fn apply_binary(op: OpKind, a: Value, b: Value, cfg: &SafeMathConfig) -> Value {
    let eps = cfg.epsilon;
    let f = move |x: f32, y: f32| -> f32 {
        match op {
            OpKind::Add => x + y,
            OpKind::Sub => x - y,
            OpKind::Mul => x * y,
            OpKind::Div => {
                // sign(0) := +1, so a zero denominator becomes +eps.
                let mag = math::abs32(y).max(eps);
                let denom = if y < 0.0 { -mag } else { mag };
                x / denom
            }
            _ => unreachable!("unary op in binary position"),
        }
    };
    match (a, b) {
        (Value::M(a), Value::M(b)) => Value::M(a.zip(&b, f)),
        (Value::M(a), Value::R(b)) => {
            assert_eq!(a.cols(), b.len(), "broadcast length mismatch");
            let cols = a.cols();
            let mut out = a;
            for r in 0..out.rows() {
                let data = out.data_mut();
                for j in 0..cols {
                    let i = r * cols + j;
                    data[i] = f(data[i], b[j]);
                }
            }
            Value::M(out)
        }
        (Value::R(a), Value::M(b)) => {
            assert_eq!(b.cols(), a.len(), "broadcast length mismatch");
            let cols = b.cols();
            let mut out = b;
            for r in 0..out.rows() {
                let data = out.data_mut();
                for j in 0..cols {
                    let i = r * cols + j;
                    data[i] = f(a[j], data[i]);
                }
            }
            Value::M(out)
        }
        (Value::R(a), Value::R(b)) => {
            assert_eq!(a.len(), b.len(), "row vector length mismatch");
            Value::R(a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect())
        }
    }
}
