//! Layer statistics, sparsity masks, and the reconstruction-error objective.
//!
//! A [`LayerStats`] bundles one linear layer's weights `W`, accumulated
//! gradients `G`, and calibration activations `Xcal` (samples as rows).
//! A saliency matrix over that layer turns into a keep/prune mask either
//! unstructured (per output row, prune the smallest `floor(phi * cols)`) or
//! N:M structured (per aligned group of `m` consecutive input columns, keep
//! the `n` largest). Mask quality is judged by the reconstruction error
//! `|| Xcal W^T - Xcal (M .* W)^T ||_F^2`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::expr::{ExprTree, Leaf, OpKind};
use crate::math;
use crate::matrix::Matrix;

/// Per-layer tensors plus the derived activation-norm vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    name: String,
    w: Matrix,
    g: Matrix,
    xcal: Matrix,
    /// Column-wise l2 norm of `xcal`, accumulated in f64; this is what the
    /// `X` leaf evaluates to. Always derived, never supplied.
    xnorm: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerError {
    DimensionMismatch(String),
    EmptyLayer,
}

impl fmt::Display for LayerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {}", msg),
            LayerError::EmptyLayer => write!(f, "layer tensors must be non-empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LayerError {}

impl LayerStats {
    pub fn new(name: String, w: Matrix, g: Matrix, xcal: Matrix) -> Result<LayerStats, LayerError> {
        if w.rows() == 0 || w.cols() == 0 || xcal.rows() == 0 {
            return Err(LayerError::EmptyLayer);
        }
        if g.rows() != w.rows() || g.cols() != w.cols() {
            return Err(LayerError::DimensionMismatch(format!(
                "G is {}x{} but W is {}x{}",
                g.rows(),
                g.cols(),
                w.rows(),
                w.cols()
            )));
        }
        if xcal.cols() != w.cols() {
            return Err(LayerError::DimensionMismatch(format!(
                "Xcal has {} columns but W has {}",
                xcal.cols(),
                w.cols()
            )));
        }
        let xnorm = column_l2_norms(&xcal);
        Ok(LayerStats {
            name,
            w,
            g,
            xcal,
            xnorm,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn xcal(&self) -> &Matrix {
        &self.xcal
    }

    pub fn xnorm(&self) -> &[f32] {
        &self.xnorm
    }

    pub fn rows(&self) -> usize {
        self.w.rows()
    }

    pub fn cols(&self) -> usize {
        self.w.cols()
    }
}

fn column_l2_norms(m: &Matrix) -> Vec<f32> {
    let mut acc = vec![0.0f64; m.cols()];
    for r in 0..m.rows() {
        let row = m.row(r);
        for (j, &v) in row.iter().enumerate() {
            acc[j] += v as f64 * v as f64;
        }
    }
    acc.into_iter().map(|s| math::sqrt64(s) as f32).collect()
}

/// How a saliency matrix is turned into a mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparsityPattern {
    /// Prune a `phi` fraction (`0 <= phi <= 1`) of each output row.
    Unstructured { phi: f32 },
    /// Keep `n` of every `m` consecutive input columns, per row.
    NofM { n: u32, m: u32 },
}

/// Keep/prune decisions for one layer; `true` means keep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl SparsityMask {
    pub fn from_vec(rows: usize, cols: usize, keep: Vec<bool>) -> SparsityMask {
        assert_eq!(keep.len(), rows * cols, "mask length mismatch");
        SparsityMask { rows, cols, keep }
    }

    pub fn all_kept(rows: usize, cols: usize) -> SparsityMask {
        SparsityMask {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn keep(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn keep_slice(&self) -> &[bool] {
        &self.keep
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.keep[r * self.cols..(r + 1) * self.cols]
    }

    /// Fraction of entries pruned.
    pub fn sparsity(&self) -> f64 {
        let pruned = self.keep.iter().filter(|&&k| !k).count();
        pruned as f64 / self.keep.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskError {
    /// Saliency contained NaN or infinity; ordering would be meaningless.
    NonFiniteSaliency,
    /// `phi` outside `[0, 1]`.
    SparsityOutOfRange(f32),
    /// N:M with `n > m` or `m == 0`.
    BadGroup { n: u32, m: u32 },
    /// Column count not divisible by `m`.
    Indivisible { cols: usize, m: u32 },
}

impl fmt::Display for MaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskError::NonFiniteSaliency => write!(f, "saliency contains non-finite values"),
            MaskError::SparsityOutOfRange(phi) => {
                write!(f, "sparsity {} outside [0, 1]", phi)
            }
            MaskError::BadGroup { n, m } => write!(f, "invalid N:M pattern {}:{}", n, m),
            MaskError::Indivisible { cols, m } => {
                write!(f, "{} columns not divisible by group size {}", cols, m)
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MaskError {}

/// Per-row unstructured mask: prunes the `floor(phi * cols)` entries with
/// the smallest saliency in each row. Ties prune the lower column index
/// first, so results are deterministic.
pub fn unstructured_mask(saliency: &Matrix, phi: f32) -> Result<SparsityMask, MaskError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(MaskError::SparsityOutOfRange(phi));
    }
    if !saliency.is_finite() {
        return Err(MaskError::NonFiniteSaliency);
    }
    let cols = saliency.cols();
    // `as usize` truncates toward zero, which is floor for these
    // non-negative products (and f64::floor needs std).
    let prune_per_row = (phi as f64 * cols as f64) as usize;
    let mut keep = vec![true; saliency.rows() * cols];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..saliency.rows() {
        let row = saliency.row(r);
        order.clear();
        order.extend(0..cols);
        // Stable sort on value; equal values keep ascending index order,
        // which makes the lower index get pruned first.
        order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
        for &c in order.iter().take(prune_per_row) {
            keep[r * cols + c] = false;
        }
    }
    Ok(SparsityMask {
        rows: saliency.rows(),
        cols,
        keep,
    })
}

/// Same contract as [`unstructured_mask`] but ranked over the whole layer
/// rather than per row: prunes the `floor(phi * rows * cols)` globally
/// smallest entries. Not the default; per-row is what the search uses.
pub fn unstructured_mask_layerwise(saliency: &Matrix, phi: f32) -> Result<SparsityMask, MaskError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(MaskError::SparsityOutOfRange(phi));
    }
    if !saliency.is_finite() {
        return Err(MaskError::NonFiniteSaliency);
    }
    let total = saliency.rows() * saliency.cols();
    let prune = (phi as f64 * total as f64) as usize;
    let data = saliency.data();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| data[a].partial_cmp(&data[b]).unwrap());
    let mut keep = vec![true; total];
    for &i in order.iter().take(prune) {
        keep[i] = false;
    }
    Ok(SparsityMask {
        rows: saliency.rows(),
        cols: saliency.cols(),
        keep,
    })
}

/// N:M structured mask: within each aligned group of `m` consecutive
/// columns of each row, keeps the `n` largest-saliency entries. The tie
/// rule matches [`unstructured_mask`]: equal values prune the lower column
/// index first.
pub fn nm_mask(saliency: &Matrix, n: u32, m: u32) -> Result<SparsityMask, MaskError> {
    if m == 0 || n > m {
        return Err(MaskError::BadGroup { n, m });
    }
    if !saliency.is_finite() {
        return Err(MaskError::NonFiniteSaliency);
    }
    let cols = saliency.cols();
    if cols % m as usize != 0 {
        return Err(MaskError::Indivisible { cols, m });
    }
    let m_us = m as usize;
    let prune_per_group = (m - n) as usize;
    let mut keep = vec![true; saliency.rows() * cols];
    let mut order: Vec<usize> = Vec::with_capacity(m_us);
    for r in 0..saliency.rows() {
        let row = saliency.row(r);
        for g0 in (0..cols).step_by(m_us) {
            order.clear();
            order.extend(g0..g0 + m_us);
            order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap());
            for &c in order.iter().take(prune_per_group) {
                keep[r * cols + c] = false;
            }
        }
    }
    Ok(SparsityMask {
        rows: saliency.rows(),
        cols,
        keep,
    })
}

/// Element-wise product of weights and mask: pruned entries become 0.
pub fn apply_mask(w: &Matrix, mask: &SparsityMask) -> Matrix {
    assert_eq!(w.rows(), mask.rows(), "mask rows mismatch");
    assert_eq!(w.cols(), mask.cols(), "mask cols mismatch");
    let mut out = w.clone();
    for (v, &k) in out.data_mut().iter_mut().zip(mask.keep_slice()) {
        if !k {
            *v = 0.0;
        }
    }
    out
}

/// Squared Frobenius norm of the output change caused by pruning:
/// `|| Xcal W^T - Xcal (M .* W)^T ||_F^2`, accumulated in f64.
///
/// Equivalent to `|| Xcal D^T ||_F^2` where `D` holds exactly the pruned
/// weights, so an all-keep mask returns exactly 0.0.
pub fn recon_error(stats: &LayerStats, mask: &SparsityMask) -> f64 {
    assert_eq!(stats.rows(), mask.rows(), "mask rows mismatch");
    assert_eq!(stats.cols(), mask.cols(), "mask cols mismatch");
    // D = W - (mask .* W): the weights that were pruned away.
    let mut d = stats.w.clone();
    for (v, &k) in d.data_mut().iter_mut().zip(mask.keep_slice()) {
        if k {
            *v = 0.0;
        }
    }
    let prod = stats.xcal.matmul_transpose_f64(&d);
    prod.iter().map(|&v| v * v).sum()
}

/// The named reference metrics, each expressed in the same tree language
/// the search uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinMetric {
    /// `|W|`
    Magnitude,
    /// `|W| * X` (activation-weighted magnitude)
    Wanda,
    /// `|W| * norm1(G)`
    Gblm1,
    /// `|W| * norm2(G)`
    Gblm2,
    /// `||W| * |W|| * mms(|G|)` — squared magnitude scaled by min-max
    /// normalized gradient magnitude.
    PrunerZero,
}

impl BuiltinMetric {
    pub const ALL: [BuiltinMetric; 5] = [
        BuiltinMetric::Magnitude,
        BuiltinMetric::Wanda,
        BuiltinMetric::Gblm1,
        BuiltinMetric::Gblm2,
        BuiltinMetric::PrunerZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinMetric::Magnitude => "magnitude",
            BuiltinMetric::Wanda => "wanda",
            BuiltinMetric::Gblm1 => "gblm1",
            BuiltinMetric::Gblm2 => "gblm2",
            BuiltinMetric::PrunerZero => "prunerzero",
        }
    }

    pub fn from_name(name: &str) -> Option<BuiltinMetric> {
        BuiltinMetric::ALL.iter().copied().find(|b| b.name() == name)
    }

    pub fn tree(self) -> ExprTree {
        let w = || ExprTree::Leaf(Leaf::W);
        let g = || ExprTree::Leaf(Leaf::G);
        let abs = |t| ExprTree::unary(OpKind::Abs, t);
        match self {
            BuiltinMetric::Magnitude => abs(w()),
            BuiltinMetric::Wanda => {
                ExprTree::binary(OpKind::Mul, abs(w()), ExprTree::Leaf(Leaf::X))
            }
            BuiltinMetric::Gblm1 => {
                ExprTree::binary(OpKind::Mul, abs(w()), ExprTree::unary(OpKind::Norm1, g()))
            }
            BuiltinMetric::Gblm2 => {
                ExprTree::binary(OpKind::Mul, abs(w()), ExprTree::unary(OpKind::Norm2, g()))
            }
            BuiltinMetric::PrunerZero => ExprTree::binary(
                OpKind::Mul,
                abs(ExprTree::binary(OpKind::Mul, abs(w()), abs(w()))),
                ExprTree::unary(OpKind::Mms, abs(g())),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{format_expr, shape_check};

    fn layer(w: Matrix, g: Matrix, xcal: Matrix) -> LayerStats {
        LayerStats::new(String::from("t"), w, g, xcal).unwrap()
    }

    #[test]
    fn xnorm_is_column_l2() {
        // Columns: [3,0] -> 3; [0,4] -> 4; [1,1] -> sqrt(2)
        let xcal = Matrix::from_rows(&[&[3.0, 0.0, 1.0], &[0.0, 4.0, 1.0]]);
        let st = layer(
            Matrix::zeros(2, 3),
            Matrix::zeros(2, 3),
            xcal,
        );
        assert_eq!(st.xnorm()[0], 3.0);
        assert_eq!(st.xnorm()[1], 4.0);
        assert!((st.xnorm()[2] - 2.0f32.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn layer_rejects_mismatched_dims() {
        let e = LayerStats::new(
            String::from("t"),
            Matrix::zeros(2, 3),
            Matrix::zeros(2, 2),
            Matrix::zeros(1, 3),
        );
        assert!(matches!(e, Err(LayerError::DimensionMismatch(_))));
        let e = LayerStats::new(
            String::from("t"),
            Matrix::zeros(2, 3),
            Matrix::zeros(2, 3),
            Matrix::zeros(1, 4),
        );
        assert!(matches!(e, Err(LayerError::DimensionMismatch(_))));
    }

    #[test]
    fn unstructured_prunes_smallest_per_row() {
        let s = Matrix::from_rows(&[&[3.0, 1.0, 2.0, 4.0]]);
        let mask = unstructured_mask(&s, 0.5).unwrap();
        assert_eq!(mask.row(0), &[true, false, false, true]);
        assert_eq!(mask.sparsity(), 0.5);
    }

    #[test]
    fn unstructured_rounds_down() {
        let s = Matrix::from_rows(&[&[5.0, 1.0, 3.0]]);
        // floor(0.5 * 3) = 1 pruned.
        let mask = unstructured_mask(&s, 0.5).unwrap();
        assert_eq!(mask.row(0), &[true, false, true]);
    }

    #[test]
    fn unstructured_tie_prunes_lower_index_first() {
        let s = Matrix::from_rows(&[&[5.0, 5.0, 5.0, 5.0]]);
        let mask = unstructured_mask(&s, 0.5).unwrap();
        assert_eq!(mask.row(0), &[false, false, true, true]);
    }

    #[test]
    fn unstructured_phi_extremes() {
        let s = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(unstructured_mask(&s, 0.0).unwrap().sparsity(), 0.0);
        assert_eq!(unstructured_mask(&s, 1.0).unwrap().sparsity(), 1.0);
        assert!(matches!(
            unstructured_mask(&s, 1.5),
            Err(MaskError::SparsityOutOfRange(_))
        ));
    }

    #[test]
    fn unstructured_rejects_non_finite() {
        let s = Matrix::from_rows(&[&[1.0, f32::NAN]]);
        assert_eq!(unstructured_mask(&s, 0.5), Err(MaskError::NonFiniteSaliency));
    }

    #[test]
    fn layerwise_mask_ranks_globally() {
        let s = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mask = unstructured_mask_layerwise(&s, 0.5).unwrap();
        assert_eq!(mask.row(0), &[false, false]);
        assert_eq!(mask.row(1), &[true, true]);
    }

    #[test]
    fn nm_keeps_n_largest_per_group() {
        let s = Matrix::from_rows(&[&[1.0, 9.0, 8.0, 2.0, 5.0, 6.0, 7.0, 4.0]]);
        let mask = nm_mask(&s, 2, 4).unwrap();
        assert_eq!(
            mask.row(0),
            &[false, true, true, false, false, true, true, false]
        );
    }

    #[test]
    fn nm_constant_row_keeps_last_n_of_each_group() {
        let s = Matrix::from_rows(&[&[1.0; 8]]);
        let mask = nm_mask(&s, 2, 4).unwrap();
        assert_eq!(
            mask.row(0),
            &[false, false, true, true, false, false, true, true]
        );
    }

    #[test]
    fn nm_with_full_width_group_matches_unstructured_half() {
        let s = Matrix::from_rows(&[&[3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0]]);
        let a = nm_mask(&s, 4, 8).unwrap();
        let b = unstructured_mask(&s, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nm_errors() {
        let s = Matrix::from_rows(&[&[1.0; 10]]);
        assert_eq!(
            nm_mask(&s, 2, 4),
            Err(MaskError::Indivisible { cols: 10, m: 4 })
        );
        let s = Matrix::from_rows(&[&[1.0; 8]]);
        assert_eq!(nm_mask(&s, 5, 4), Err(MaskError::BadGroup { n: 5, m: 4 }));
        assert_eq!(nm_mask(&s, 1, 0), Err(MaskError::BadGroup { n: 1, m: 0 }));
    }

    #[test]
    fn apply_mask_zeroes_pruned_entries() {
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mask = SparsityMask::from_vec(2, 2, vec![true, false, false, true]);
        let pruned = apply_mask(&w, &mask);
        assert_eq!(pruned.data(), &[1.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn recon_error_hand_case() {
        // W = [[1, 1]], Xcal = [[1, 1], [1, -1]], prune column 1:
        // outputs change by [1, -1] -> error = 1 + 1 = 2.
        let st = layer(
            Matrix::from_rows(&[&[1.0, 1.0]]),
            Matrix::zeros(1, 2),
            Matrix::from_rows(&[&[1.0, 1.0], &[1.0, -1.0]]),
        );
        let mask = SparsityMask::from_vec(1, 2, vec![true, false]);
        assert_eq!(recon_error(&st, &mask), 2.0);
    }

    #[test]
    fn recon_error_all_keep_is_exactly_zero() {
        let st = layer(
            Matrix::from_rows(&[&[0.3, -1.2], &[7.5, 0.01]]),
            Matrix::zeros(2, 2),
            Matrix::from_rows(&[&[0.9, 1.7]]),
        );
        assert_eq!(recon_error(&st, &SparsityMask::all_kept(2, 2)), 0.0);
    }

    #[test]
    fn recon_error_grows_with_more_pruning() {
        let st = layer(
            Matrix::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]),
            Matrix::zeros(1, 4),
            Matrix::from_rows(&[&[1.0, 1.0, 1.0, 1.0], &[0.5, -0.5, 2.0, 0.1]]),
        );
        let s = st.w().clone();
        let half = unstructured_mask(&s, 0.5).unwrap();
        let full = unstructured_mask(&s, 1.0).unwrap();
        let e_half = recon_error(&st, &half);
        let e_full = recon_error(&st, &full);
        assert!(e_half > 0.0);
        assert!(e_full > e_half);
    }

    #[test]
    fn builtin_names_round_trip() {
        for b in BuiltinMetric::ALL {
            assert_eq!(BuiltinMetric::from_name(b.name()), Some(b));
            assert!(shape_check(&b.tree()).is_ok());
        }
        assert_eq!(BuiltinMetric::from_name("nope"), None);
    }

    #[test]
    fn builtin_canonical_strings() {
        assert_eq!(
            format_expr(&BuiltinMetric::Magnitude.tree()),
            "(W) abs (#)"
        );
        assert_eq!(
            format_expr(&BuiltinMetric::Wanda.tree()),
            "(((W) abs (#)) mul (X))"
        );
        assert_eq!(
            format_expr(&BuiltinMetric::Gblm1.tree()),
            "(((W) abs (#)) mul ((G) norm1 (#)))"
        );
        assert_eq!(
            format_expr(&BuiltinMetric::PrunerZero.tree()),
            "(((((W) abs (#)) mul ((W) abs (#))) abs (#)) mul (((G) abs (#)) mms (#)))"
        );
    }

    #[test]
    fn prunerzero_tree_has_expected_op_histogram() {
        let h = BuiltinMetric::PrunerZero.tree().op_histogram();
        assert_eq!(h.get(&OpKind::Mul), Some(&2));
        assert_eq!(h.get(&OpKind::Abs), Some(&4));
        assert_eq!(h.get(&OpKind::Mms), Some(&1));
        assert_eq!(BuiltinMetric::PrunerZero.tree().node_count(), 10);
    }
}
