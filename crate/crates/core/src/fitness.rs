//! Fitness scoring for candidate metrics: lower is better.
//!
//! Three modes share one score type and one cache:
//!
//! * **Reconstruction proxy** — prune every layer with the candidate's mask
//!   and score the mean reconstruction error relative to the magnitude
//!   baseline (`1.0` means "exactly as good as magnitude pruning").
//! * **Target recovery** — mean rank disagreement (`1 - Spearman`) between
//!   the candidate's saliency and a known target metric's saliency; `0`
//!   means the candidate ranks weights identically to the target.
//! * **External** — an arbitrary command scores the expression; only the
//!   wire-protocol helpers live here, process handling is std-side.
//!
//! Anything that cannot be scored — non-finite saliency, constant ranks,
//! a failed external call — collapses to the `+inf` sentinel, which sorts
//! after every real score. NaN never escapes this module.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::analysis::spearman_f32;
use crate::expr::eval::{evaluate, SafeMathConfig};
use crate::expr::ExprTree;
use crate::prune::{nm_mask, recon_error, unstructured_mask, LayerStats, MaskError, SparsityMask, SparsityPattern};
use crate::prune::BuiltinMetric;
use crate::simplify::CanonicalKey;

/// A candidate's fitness. `finite` is false exactly for the sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitnessScore {
    pub value: f64,
    pub finite: bool,
}

impl FitnessScore {
    /// The "unscorable" value: `+inf`, sorted after everything finite.
    pub fn sentinel() -> FitnessScore {
        FitnessScore {
            value: f64::INFINITY,
            finite: false,
        }
    }

    /// Wraps a raw value, collapsing NaN and infinities to the sentinel.
    pub fn from_value(v: f64) -> FitnessScore {
        if v.is_finite() {
            FitnessScore {
                value: v,
                finite: true,
            }
        } else {
            FitnessScore::sentinel()
        }
    }

    pub fn is_sentinel(self) -> bool {
        !self.finite
    }

    /// Value-only comparison; population ordering adds node-count and age
    /// tie-breaks on top of this.
    pub fn cmp_value(self, other: FitnessScore) -> core::cmp::Ordering {
        self.value.total_cmp(&other.value)
    }
}

impl fmt::Display for FitnessScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.finite {
            write!(f, "{}", self.value)
        } else {
            write!(f, "inf")
        }
    }
}

/// Anything that can score a tree. Implementations must be deterministic
/// for the search determinism guarantees to hold.
pub trait FitnessEval {
    fn score(&mut self, tree: &ExprTree) -> FitnessScore;
}

/// Write-once score cache keyed by canonical (post-OOS) form, so
/// equivalent trees always receive identical scores within a run.
#[derive(Debug, Default)]
pub struct FitnessCache {
    map: alloc::collections::BTreeMap<CanonicalKey, FitnessScore>,
    hits: u64,
}

impl FitnessCache {
    pub fn new() -> FitnessCache {
        FitnessCache::default()
    }

    /// Returns the cached score for `key`, or computes, stores, and returns
    /// it. A key is written at most once; later lookups never re-evaluate.
    pub fn get_or_insert_with(
        &mut self,
        key: CanonicalKey,
        compute: impl FnOnce() -> FitnessScore,
    ) -> FitnessScore {
        if let Some(&s) = self.map.get(&key) {
            self.hits += 1;
            return s;
        }
        let s = compute();
        self.map.insert(key, s);
        s
    }

    pub fn get(&self, key: CanonicalKey) -> Option<FitnessScore> {
        self.map.get(&key).copied()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn build_mask(saliency: &crate::matrix::Matrix, pattern: SparsityPattern) -> Result<SparsityMask, MaskError> {
    match pattern {
        SparsityPattern::Unstructured { phi } => unstructured_mask(saliency, phi),
        SparsityPattern::NofM { n, m } => nm_mask(saliency, n, m),
    }
}

/// Per-layer detail row from a reconstruction-proxy evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecon {
    pub layer: usize,
    pub tree_error: f64,
    pub baseline_error: f64,
    /// Baseline below epsilon: the layer contributes nothing to the score.
    pub skipped: bool,
}

/// Reconstruction-proxy fitness: mean over layers of
/// `recon_error(candidate mask) / recon_error(magnitude mask)`.
pub struct ReconProxy<'a> {
    layers: &'a [LayerStats],
    pattern: SparsityPattern,
    cfg: SafeMathConfig,
    /// Magnitude-baseline error per layer; `None` marks a skipped layer.
    baselines: Vec<Option<f64>>,
}

impl<'a> ReconProxy<'a> {
    /// Precomputes the magnitude baseline for every layer. Fails if the
    /// pattern itself is invalid for these layers (bad `phi`, indivisible
    /// N:M groups), so scoring later cannot hit a mask error.
    pub fn new(
        layers: &'a [LayerStats],
        pattern: SparsityPattern,
        cfg: SafeMathConfig,
    ) -> Result<ReconProxy<'a>, MaskError> {
        let magnitude = BuiltinMetric::Magnitude.tree();
        let mut baselines = Vec::with_capacity(layers.len());
        for st in layers {
            let out = evaluate(&magnitude, st, &cfg).expect("magnitude tree is shape-valid");
            let mask = build_mask(&out.values, pattern)?;
            let err = recon_error(st, &mask);
            baselines.push(if err < cfg.epsilon as f64 { None } else { Some(err) });
        }
        Ok(ReconProxy {
            layers,
            pattern,
            cfg,
            baselines,
        })
    }

    /// Scores plus the per-layer breakdown (for verbose reporting).
    pub fn layer_report(&self, tree: &ExprTree) -> (FitnessScore, Vec<LayerRecon>) {
        let mut rows = Vec::with_capacity(self.layers.len());
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for (i, st) in self.layers.iter().enumerate() {
            let out = match evaluate(tree, st, &self.cfg) {
                Ok(out) => out,
                Err(_) => return (FitnessScore::sentinel(), rows),
            };
            if !out.finite {
                return (FitnessScore::sentinel(), rows);
            }
            let mask = build_mask(&out.values, self.pattern)
                .expect("pattern validated at construction, saliency is finite");
            let err = recon_error(st, &mask);
            match self.baselines[i] {
                Some(base) => {
                    rows.push(LayerRecon {
                        layer: i,
                        tree_error: err,
                        baseline_error: base,
                        skipped: false,
                    });
                    sum += err / base;
                    n += 1;
                }
                None => rows.push(LayerRecon {
                    layer: i,
                    tree_error: err,
                    baseline_error: 0.0,
                    skipped: true,
                }),
            }
        }
        if n == 0 {
            // Every layer skipped (e.g. phi = 0 prunes nothing anywhere):
            // indistinguishable from the baseline by construction.
            return (FitnessScore::from_value(1.0), rows);
        }
        (FitnessScore::from_value(sum / n as f64), rows)
    }
}

impl FitnessEval for ReconProxy<'_> {
    fn score(&mut self, tree: &ExprTree) -> FitnessScore {
        self.layer_report(tree).0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetError {
    /// Target saliency was non-finite or rank-constant on a layer; no
    /// candidate could ever be scored against it.
    DegenerateTarget { layer: usize },
}

impl fmt::Display for TargetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetError::DegenerateTarget { layer } => write!(
                f,
                "target metric has constant or non-finite saliency on layer {}",
                layer
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TargetError {}

/// Target-recovery fitness: mean over layers of `1 - Spearman(candidate,
/// target)`, in `[0, 2]` with 0 = identical ranking.
pub struct TargetRecovery<'a> {
    layers: &'a [LayerStats],
    cfg: SafeMathConfig,
    /// Flattened target saliency per layer.
    target_saliency: Vec<Vec<f32>>,
}

impl<'a> TargetRecovery<'a> {
    pub fn new(
        layers: &'a [LayerStats],
        target: &ExprTree,
        cfg: SafeMathConfig,
    ) -> Result<TargetRecovery<'a>, TargetError> {
        let mut target_saliency = Vec::with_capacity(layers.len());
        for (i, st) in layers.iter().enumerate() {
            let out = evaluate(target, st, &cfg)
                .map_err(|_| TargetError::DegenerateTarget { layer: i })?;
            let flat = out.values.data().to_vec();
            let degenerate = !out.finite || flat.iter().all(|&v| v == flat[0]);
            if degenerate {
                return Err(TargetError::DegenerateTarget { layer: i });
            }
            target_saliency.push(flat);
        }
        Ok(TargetRecovery {
            layers,
            cfg,
            target_saliency,
        })
    }
}

impl FitnessEval for TargetRecovery<'_> {
    fn score(&mut self, tree: &ExprTree) -> FitnessScore {
        let mut sum = 0.0f64;
        for (i, st) in self.layers.iter().enumerate() {
            let out = match evaluate(tree, st, &self.cfg) {
                Ok(out) => out,
                Err(_) => return FitnessScore::sentinel(),
            };
            if !out.finite {
                return FitnessScore::sentinel();
            }
            match spearman_f32(out.values.data(), &self.target_saliency[i]) {
                // Zero rank variance on either side -> unscorable.
                None => return FitnessScore::sentinel(),
                Some(rho) => sum += 1.0 - rho,
            }
        }
        FitnessScore::from_value(sum / self.layers.len() as f64)
    }
}

/// Substring the external command template must contain; it is replaced by
/// the candidate's canonical expression string.
pub const EXTERNAL_EXPR_PLACEHOLDER: &str = "{expr}";

/// True iff the template names the expression placeholder at least once.
pub fn validate_command_template(template: &str) -> bool {
    template.contains(EXTERNAL_EXPR_PLACEHOLDER)
}

/// Parses the external evaluator's standard output: exactly one decimal
/// float, surrounding whitespace ignored. NaN is rejected (the caller maps
/// `None` to the sentinel); infinities parse and collapse to the sentinel
/// via [`FitnessScore::from_value`].
pub fn parse_external_output(stdout: &str) -> Option<f64> {
    let trimmed = stdout.trim();
    if trimmed.is_empty() {
        return None;
    }
    let v: f64 = trimmed.parse().ok()?;
    if v.is_nan() {
        return None;
    }
    Some(v)
}

/// Splits a command template into argv words and substitutes the
/// placeholder into each word. Whitespace-separated; the expression lands
/// inside a single argv entry, so no shell is involved.
pub fn split_command_template(template: &str, expr: &str) -> Vec<String> {
    template
        .split_whitespace()
        .map(|w| {
            if w.contains(EXTERNAL_EXPR_PLACEHOLDER) {
                w.replace(EXTERNAL_EXPR_PLACEHOLDER, expr)
            } else {
                String::from(w)
            }
        })
        .collect()
}
