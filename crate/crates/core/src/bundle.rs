//! Synthetic tensor bundles: seeded layer statistics for exercising the
//! pruning pipeline without any real model.
//!
//! Two generators: independent Gaussian layers (optionally with per-column
//! input anisotropy, which is what separates activation-aware metrics from
//! plain magnitude), and a two-layer MLP regression whose gradients are
//! computed analytically and checked here against finite differences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math::{cos64, ln64, sqrt64, tanh64};
use crate::matrix::Matrix;
use crate::prune::LayerStats;

/// Which generator produced a bundle; the on-disk format stores this tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BundleKind {
    Gaussian,
    Mlp,
}

impl BundleKind {
    pub fn to_u8(self) -> u8 {
        match self {
            BundleKind::Gaussian => 0,
            BundleKind::Mlp => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<BundleKind> {
        match v {
            0 => Some(BundleKind::Gaussian),
            1 => Some(BundleKind::Mlp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleMeta {
    pub version: u32,
    pub generator_seed: u64,
    pub kind: BundleKind,
    /// Creation timestamp. Generators write 0 so identical seeds produce
    /// byte-identical files.
    pub created_unix_s: u64,
}

/// A set of layers plus provenance metadata.
#[derive(Clone, Debug)]
pub struct TensorBundle {
    pub meta: BundleMeta,
    pub layers: Vec<LayerStats>,
}

/// Standard normal draw via the Box-Muller transform. Hand-rolled (rather
/// than a distributions crate) to pin the exact draw order and arithmetic:
/// two uniforms `u1, u2` in sequence, then `sqrt(-2 ln (1 - u1)) *
/// cos(2 pi u2)`. The `1 - u1` shift moves `[0, 1)` to `(0, 1]` so the log
/// never sees zero.
pub fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    sqrt64(-2.0 * ln64(1.0 - u1)) * cos64(2.0 * core::f64::consts::PI * u2)
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data: Vec<f32> = (0..rows * cols)
        .map(|_| (sample_standard_normal(rng) * scale) as f32)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenError {
    EmptyDimension(&'static str),
    AnisotropyLength { expected: usize, got: usize },
}

impl core::fmt::Display for GenError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GenError::EmptyDimension(which) => write!(f, "{} must be at least 1", which),
            GenError::AnisotropyLength { expected, got } => write!(
                f,
                "anisotropy scale must have one entry per column ({}), got {}",
                expected, got
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GenError {}

/// Independent Gaussian layers named `layer0, layer1, ...`. Per layer the
/// draw order is W, then G, then Xcal (all row-major). `anisotropy`
/// multiplies calibration column `j` by its `j`-th entry, making some
/// input channels systematically louder than others.
pub fn gen_gaussian(
    seed: u64,
    n_layers: usize,
    rows: usize,
    cols: usize,
    n_samples: usize,
    anisotropy: Option<&[f32]>,
) -> Result<TensorBundle, GenError> {
    if n_layers == 0 {
        return Err(GenError::EmptyDimension("layer count"));
    }
    if rows == 0 {
        return Err(GenError::EmptyDimension("rows"));
    }
    if cols == 0 {
        return Err(GenError::EmptyDimension("cols"));
    }
    if n_samples == 0 {
        return Err(GenError::EmptyDimension("sample count"));
    }
    if let Some(scale) = anisotropy {
        if scale.len() != cols {
            return Err(GenError::AnisotropyLength {
                expected: cols,
                got: scale.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let w = normal_matrix(&mut rng, rows, cols, 1.0);
        let g = normal_matrix(&mut rng, rows, cols, 1.0);
        let mut xcal = normal_matrix(&mut rng, n_samples, cols, 1.0);
        if let Some(scale) = anisotropy {
            for r in 0..n_samples {
                for c in 0..cols {
                    let v = xcal.get(r, c) * scale[c];
                    xcal.set(r, c, v);
                }
            }
        }
        let st = LayerStats::new(format!("layer{}", i), w, g, xcal)
            .expect("generated dimensions are consistent");
        layers.push(st);
    }
    Ok(TensorBundle {
        meta: BundleMeta {
            version: 1,
            generator_seed: seed,
            kind: BundleKind::Gaussian,
            created_unix_s: 0,
        },
        layers,
    })
}

/// Hidden-layer activation. Identity exists so gradient tests can isolate
/// the linear part from the tanh saturation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// Minimal f64 matrix used for the forward/backward passes; weights stay
/// f32 in storage, arithmetic runs in f64.
struct M64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl M64 {
    fn from_f32(m: &Matrix) -> M64 {
        M64 {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self * otherᵀ`; shapes (m,k) x (n,k) -> (m,n).
    fn mul_nt(&self, other: &M64) -> M64 {
        assert_eq!(self.cols, other.cols);
        let mut out = vec![0.0; self.rows * other.rows];
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.at(i, k) * other.at(j, k);
                }
                out[i * other.rows + j] = acc;
            }
        }
        M64 {
            rows: self.rows,
            cols: other.rows,
            data: out,
        }
    }

    /// `self * other`; shapes (m,k) x (k,n) -> (m,n).
    fn mul_nn(&self, other: &M64) -> M64 {
        assert_eq!(self.cols, other.rows);
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                for j in 0..other.cols {
                    out[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        M64 {
            rows: self.rows,
            cols: other.cols,
            data: out,
        }
    }

    /// `selfᵀ * other`; shapes (n,p) x (n,q) -> (p,q).
    fn mul_tn(&self, other: &M64) -> M64 {
        assert_eq!(self.rows, other.rows);
        let mut out = vec![0.0; self.cols * other.cols];
        for s in 0..self.rows {
            for i in 0..self.cols {
                let a = self.at(s, i);
                for j in 0..other.cols {
                    out[i * other.cols + j] += a * other.at(s, j);
                }
            }
        }
        M64 {
            rows: self.cols,
            cols: other.cols,
            data: out,
        }
    }

    fn to_f32(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

/// Two-layer MLP regression task: `pred = act(X W1ᵀ) W2ᵀ`, mean squared
/// error against random targets. Small enough that exact gradients are a
/// page of code, big enough that pruning choices matter.
#[derive(Clone, Debug)]
pub struct ToyMlp {
    /// h x d.
    pub w1: Matrix,
    /// o x h.
    pub w2: Matrix,
    /// n x d inputs.
    pub x: Matrix,
    /// n x o targets.
    pub y: Matrix,
    pub activation: Activation,
    pub seed: u64,
}

impl ToyMlp {
    /// Seeded instance. Draw order: W1, W2, X, Y. Weights are scaled by
    /// `1/sqrt(fan_in)` so hidden activations stay in tanh's useful range.
    pub fn generate(seed: u64, d_in: usize, hidden: usize, d_out: usize, n_samples: usize) -> ToyMlp {
        assert!(d_in > 0 && hidden > 0 && d_out > 0 && n_samples > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = normal_matrix(&mut rng, hidden, d_in, 1.0 / sqrt64(d_in as f64));
        let w2 = normal_matrix(&mut rng, d_out, hidden, 1.0 / sqrt64(hidden as f64));
        let x = normal_matrix(&mut rng, n_samples, d_in, 1.0);
        let y = normal_matrix(&mut rng, n_samples, d_out, 1.0);
        ToyMlp {
            w1,
            w2,
            x,
            y,
            activation: Activation::Tanh,
            seed,
        }
    }

    fn act(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Tanh => tanh64(z),
            Activation::Identity => z,
        }
    }

    fn hidden_f64(&self, w1: &Matrix) -> M64 {
        let x = M64::from_f32(&self.x);
        let mut h = x.mul_nt(&M64::from_f32(w1));
        for v in h.data.iter_mut() {
            *v = self.act(*v);
        }
        h
    }

    /// Hidden activations as stored-precision f32 (calibration input of
    /// the second layer).
    pub fn hidden(&self) -> Matrix {
        self.hidden_f64(&self.w1).to_f32()
    }

    /// MSE loss for arbitrary weights; the f64 path both gradients and
    /// finite differences share.
    pub fn loss_with(&self, w1: &Matrix, w2: &Matrix) -> f64 {
        let h = self.hidden_f64(w1);
        let pred = h.mul_nt(&M64::from_f32(w2));
        let y = M64::from_f32(&self.y);
        let n = self.x.rows() as f64;
        let mut acc = 0.0;
        for (p, t) in pred.data.iter().zip(y.data.iter()) {
            let e = p - t;
            acc += e * e;
        }
        acc / n
    }

    pub fn loss(&self) -> f64 {
        self.loss_with(&self.w1, &self.w2)
    }

    /// Analytic gradients `(dL/dW1, dL/dW2)` of the MSE:
    ///
    /// ```text
    /// E   = pred - Y                      (n x o)
    /// dW2 = (2/n) Eᵀ H                    (o x h)
    /// dH  = (2/n) E W2                    (n x h)
    /// dZ  = dH ⊙ act'(Z)                  (tanh': 1 - H², identity: 1)
    /// dW1 = dZᵀ X                         (h x d)
    /// ```
    pub fn gradients(&self) -> (Matrix, Matrix) {
        let n = self.x.rows() as f64;
        let x = M64::from_f32(&self.x);
        let w2 = M64::from_f32(&self.w2);
        let h = self.hidden_f64(&self.w1);
        let pred = h.mul_nt(&w2);
        let y = M64::from_f32(&self.y);
        let mut e = pred;
        for (v, t) in e.data.iter_mut().zip(y.data.iter()) {
            *v = 2.0 * (*v - t) / n;
        }
        let dw2 = e.mul_tn(&h);
        let mut dz = e.mul_nn(&w2);
        if self.activation == Activation::Tanh {
            for (v, hv) in dz.data.iter_mut().zip(h.data.iter()) {
                *v *= 1.0 - hv * hv;
            }
        }
        let dw1 = dz.mul_tn(&x);
        (dw1.to_f32(), dw2.to_f32())
    }

    /// Packages the task as two prunable layers: `fc1` sees the raw inputs,
    /// `fc2` sees the hidden activations.
    pub fn to_bundle(&self) -> TensorBundle {
        let (g1, g2) = self.gradients();
        let fc1 = LayerStats::new(String::from("fc1"), self.w1.clone(), g1, self.x.clone())
            .expect("fc1 dimensions are consistent");
        let fc2 = LayerStats::new(String::from("fc2"), self.w2.clone(), g2, self.hidden())
            .expect("fc2 dimensions are consistent");
        TensorBundle {
            meta: BundleMeta {
                version: 1,
                generator_seed: self.seed,
                kind: BundleKind::Mlp,
                created_unix_s: 0,
            },
            layers: vec![fc1, fc2],
        }
    }

    /// Central-difference check of `gradients()`. Checks every weight when
    /// there are at most `SUBSAMPLE` of them, otherwise a seeded subsample.
    /// The step is applied to the stored f32 weight and the realized (post-
    /// rounding) step is used in the quotient, so quantization does not
    /// bias the estimate.
    pub fn fd_check(&self, step: f64) -> FdReport {
        const SUBSAMPLE: usize = 512;
        let (g1, g2) = self.gradients();
        let total = g1.rows() * g1.cols() + g2.rows() * g2.cols();
        let positions: Vec<usize> = if total <= SUBSAMPLE {
            (0..total).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5f3759df);
            let mut idx: Vec<usize> = (0..total).collect();
            for i in 0..SUBSAMPLE {
                let j = rng.gen_range(i..total);
                idx.swap(i, j);
            }
            idx.truncate(SUBSAMPLE);
            idx
        };
        let n1 = g1.rows() * g1.cols();
        let mut max_rel = 0.0f64;
        for &p in &positions {
            let (which, flat) = if p < n1 { (1, p) } else { (2, p - n1) };
            let (w1p, w1m, w2p, w2m, analytic) = if which == 1 {
                let mut wp = self.w1.clone();
                let mut wm = self.w1.clone();
                let base = wp.data()[flat] as f64;
                wp.data_mut()[flat] = (base + step) as f32;
                wm.data_mut()[flat] = (base - step) as f32;
                (wp, wm, self.w2.clone(), self.w2.clone(), g1.data()[flat] as f64)
            } else {
                let mut wp = self.w2.clone();
                let mut wm = self.w2.clone();
                let base = wp.data()[flat] as f64;
                wp.data_mut()[flat] = (base + step) as f32;
                wm.data_mut()[flat] = (base - step) as f32;
                (self.w1.clone(), self.w1.clone(), wp, wm, g2.data()[flat] as f64)
            };
            let realized = if which == 1 {
                w1p.data()[flat] as f64 - w1m.data()[flat] as f64
            } else {
                w2p.data()[flat] as f64 - w2m.data()[flat] as f64
            };
            let lp = self.loss_with(&w1p, &w2p);
            let lm = self.loss_with(&w1m, &w2m);
            let fd = (lp - lm) / realized;
            let rel = crate::math::abs64(fd - analytic) / crate::math::abs64(analytic).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        FdReport {
            max_rel_error: max_rel,
            checked: positions.len(),
        }
    }
}

/// Result of a finite-difference gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// MLP-backed bundle in one call.
pub fn gen_mlp(seed: u64, d_in: usize, hidden: usize, d_out: usize, n_samples: usize) -> TensorBundle {
    ToyMlp::generate(seed, d_in, hidden, d_out, n_samples).to_bundle()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_has_sane_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {}", mean);
        assert!((var - 1.0).abs() < 0.05, "var {}", var);
        assert!(draws.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn gaussian_bundle_shapes_names_and_determinism() {
        let b1 = gen_gaussian(5, 3, 8, 16, 32, None).unwrap();
        let b2 = gen_gaussian(5, 3, 8, 16, 32, None).unwrap();
        assert_eq!(b1.layers.len(), 3);
        for (i, layer) in b1.layers.iter().enumerate() {
            assert_eq!(layer.name(), format!("layer{}", i));
            assert_eq!(layer.w().rows(), 8);
            assert_eq!(layer.w().cols(), 16);
            assert_eq!(layer.g().rows(), 8);
            assert_eq!(layer.xcal().rows(), 32);
            assert_eq!(layer.xcal().cols(), 16);
            assert_eq!(layer.w().data(), b2.layers[i].w().data());
            assert_eq!(layer.g().data(), b2.layers[i].g().data());
            assert_eq!(layer.xcal().data(), b2.layers[i].xcal().data());
        }
        assert_eq!(b1.meta.created_unix_s, 0);
        assert_eq!(b1.meta.kind, BundleKind::Gaussian);
        let b3 = gen_gaussian(6, 3, 8, 16, 32, None).unwrap();
        assert_ne!(b1.layers[0].w().data(), b3.layers[0].w().data());
    }

    #[test]
    fn anisotropy_scales_the_right_columns() {
        let scale = [10.0, 1.0, 1.0, 1.0];
        let b = gen_gaussian(7, 1, 4, 4, 512, Some(&scale)).unwrap();
        let xn = b.layers[0].xnorm();
        let loud = xn[0] as f64;
        let quiet = (xn[1] as f64 + xn[2] as f64 + xn[3] as f64) / 3.0;
        let ratio = loud / quiet;
        assert!(
            (7.0..13.0).contains(&ratio),
            "anisotropy ratio {} out of band",
            ratio
        );
    }

    #[test]
    fn gen_errors() {
        assert!(matches!(
            gen_gaussian(0, 0, 4, 4, 4, None),
            Err(GenError::EmptyDimension("layer count"))
        ));
        assert!(matches!(
            gen_gaussian(0, 1, 4, 4, 4, Some(&[1.0; 3])),
            Err(GenError::AnisotropyLength { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn mlp_bundle_layout() {
        let b = gen_mlp(3, 6, 5, 2, 12);
        assert_eq!(b.meta.kind, BundleKind::Mlp);
        assert_eq!(b.layers.len(), 2);
        let fc1 = &b.layers[0];
        let fc2 = &b.layers[1];
        assert_eq!(fc1.name(), "fc1");
        assert_eq!((fc1.w().rows(), fc1.w().cols()), (5, 6));
        assert_eq!((fc1.xcal().rows(), fc1.xcal().cols()), (12, 6));
        assert_eq!(fc2.name(), "fc2");
        assert_eq!((fc2.w().rows(), fc2.w().cols()), (2, 5));
        assert_eq!((fc2.xcal().rows(), fc2.xcal().cols()), (12, 5));
        // fc2's calibration is exactly the hidden activations.
        let mlp = ToyMlp::generate(3, 6, 5, 2, 12);
        assert_eq!(fc2.xcal().data(), mlp.hidden().data());
    }

    #[test]
    fn zero_error_means_zero_gradients() {
        let mut mlp = ToyMlp::generate(1, 3, 4, 2, 6);
        // Make targets equal predictions: loss 0, gradients 0.
        let h = mlp.hidden_f64(&mlp.w1);
        let pred = h.mul_nt(&M64::from_f32(&mlp.w2));
        mlp.y = pred.to_f32();
        assert!(mlp.loss() < 1e-10);
        let (g1, g2) = mlp.gradients();
        assert!(g1.data().iter().all(|v| v.abs() < 1e-6));
        assert!(g2.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn second_layer_gradient_matches_hand_oracle() {
        // Independent recomputation of dW2 = (2/n) Eᵀ H, scalar loops only.
        let mlp = ToyMlp::generate(11, 4, 3, 2, 5);
        let (_, dw2) = mlp.gradients();
        let h = mlp.hidden();
        let n = mlp.x.rows();
        // pred[s][o] = sum_k h[s][k] w2[o][k]
        let mut oracle = vec![0.0f64; mlp.w2.rows() * mlp.w2.cols()];
        for s in 0..n {
            for o in 0..mlp.w2.rows() {
                let mut pred = 0.0f64;
                for k in 0..mlp.w2.cols() {
                    pred += h.get(s, k) as f64 * mlp.w2.get(o, k) as f64;
                }
                let e = pred - mlp.y.get(s, o) as f64;
                for k in 0..mlp.w2.cols() {
                    oracle[o * mlp.w2.cols() + k] += 2.0 * e * h.get(s, k) as f64 / n as f64;
                }
            }
        }
        for (a, b) in dw2.data().iter().zip(oracle.iter()) {
            assert!((*a as f64 - b).abs() < 1e-5, "{} vs {}", a, b);
        }
    }

    #[test]
    fn identity_activation_fd_is_tight() {
        let mut mlp = ToyMlp::generate(2, 4, 4, 2, 8);
        mlp.activation = Activation::Identity;
        let rep = mlp.fd_check(1e-3);
        assert_eq!(rep.checked, 4 * 4 + 2 * 4);
        assert!(rep.max_rel_error < 1e-4, "identity fd {}", rep.max_rel_error);
    }

    #[test]
    fn tanh_fd_check_under_tolerance() {
        let mlp = ToyMlp::generate(4, 6, 8, 3, 16);
        let rep = mlp.fd_check(1e-3);
        assert_eq!(rep.checked, 8 * 6 + 3 * 8);
        assert!(rep.max_rel_error < 1e-4, "tanh fd {}", rep.max_rel_error);
    }

    #[test]
    fn fd_check_subsamples_large_models() {
        let mlp = ToyMlp::generate(8, 24, 32, 8, 12);
        let total = 32 * 24 + 8 * 32;
        assert!(total > 512);
        // A smaller step than the default 1e-3: at these dims some sampled
        // gradients are small enough that O(step^2) truncation dominates
        // the relative error.
        let rep = mlp.fd_check(2e-4);
        assert_eq!(rep.checked, 512);
        assert!(rep.max_rel_error < 1e-4, "subsampled fd {}", rep.max_rel_error);
    }

    #[test]
    fn mlp_determinism() {
        let a = gen_mlp(21, 5, 6, 2, 10);
        let b = gen_mlp(21, 5, 6, 2, 10);
        for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
            assert_eq!(la.w().data(), lb.w().data());
            assert_eq!(la.g().data(), lb.g().data());
            assert_eq!(la.xcal().data(), lb.xcal().data());
        }
    }
}
