//! Thread-parallel reconstruction scoring.
//!
//! Layers are independent, so the per-layer evaluate/mask/error pipeline
//! fans out across a scoped thread pool. Results come back keyed by layer
//! index and are combined in index order, which makes the final score
//! bit-identical for any thread count.

use anyhow::{Context, Result};
use pruner_zero_core::expr::eval::{evaluate, SafeMathConfig};
use pruner_zero_core::expr::ExprTree;
use pruner_zero_core::fitness::{FitnessEval, FitnessScore};
use pruner_zero_core::prune::{
    apply_mask, nm_mask, recon_error, unstructured_mask, BuiltinMetric, LayerStats, SparsityMask,
    SparsityPattern,
};

fn build_mask(saliency: &pruner_zero_core::Matrix, pattern: SparsityPattern) -> Result<SparsityMask, pruner_zero_core::prune::MaskError> {
    match pattern {
        SparsityPattern::Unstructured { phi } => unstructured_mask(saliency, phi),
        SparsityPattern::NofM { n, m } => nm_mask(saliency, n, m),
    }
}

/// Everything the `prune` command reports about one layer.
#[derive(Clone, Debug)]
pub struct LayerPruneResult {
    pub name: String,
    pub mask: SparsityMask,
    pub kept: usize,
    pub total: usize,
    pub recon: f64,
    pub finite_saliency: bool,
}

/// Runs `work` over `0..n` on up to `threads` scoped worker threads and
/// returns results in index order.
fn fan_out<T, F>(n: usize, threads: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 || n <= 1 {
        return (0..n).map(work).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut acc = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        acc.push((i, work(i)));
                    }
                    acc
                })
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker thread panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled every slot")).collect()
}

/// Evaluates a metric and prunes every layer; per-layer results in layer
/// order. Non-finite saliency is reported per layer, not an error.
pub fn prune_layers(
    layers: &[LayerStats],
    tree: &ExprTree,
    pattern: SparsityPattern,
    cfg: &SafeMathConfig,
    threads: usize,
) -> Result<Vec<LayerPruneResult>> {
    let results = fan_out(layers.len(), threads, |i| -> Result<LayerPruneResult> {
        let st = &layers[i];
        let out = evaluate(tree, st, cfg)
            .map_err(|e| anyhow::anyhow!("{}", e))
            .with_context(|| format!("evaluating metric on layer '{}'", st.name()))?;
        let mask = if out.finite {
            build_mask(&out.values, pattern)
                .map_err(|e| anyhow::anyhow!("{}", e))
                .with_context(|| format!("building mask for layer '{}'", st.name()))?
        } else {
            // Saliency broke down numerically; report it rather than mask.
            SparsityMask::all_kept(st.w().rows(), st.w().cols())
        };
        let total = st.w().rows() * st.w().cols();
        let kept = (0..st.w().rows())
            .map(|r| (0..st.w().cols()).filter(|&c| mask.keep(r, c)).count())
            .sum();
        let recon = recon_error(st, &mask);
        // Exercise apply_mask so the pruned weights path stays honest.
        let _pruned = apply_mask(st.w(), &mask);
        Ok(LayerPruneResult {
            name: st.name().to_string(),
            mask,
            kept,
            total,
            recon,
            finite_saliency: out.finite,
        })
    });
    results.into_iter().collect()
}

/// Reconstruction-proxy fitness with a thread fan-out per score call.
/// Mirrors the sequential core evaluator exactly (same baselines, same
/// skip rule, same mean), scores only differ in wall time.
pub struct ParallelRecon<'a> {
    layers: &'a [LayerStats],
    pattern: SparsityPattern,
    cfg: SafeMathConfig,
    baselines: Vec<Option<f64>>,
    threads: usize,
}

impl<'a> ParallelRecon<'a> {
    pub fn new(
        layers: &'a [LayerStats],
        pattern: SparsityPattern,
        cfg: SafeMathConfig,
        threads: usize,
    ) -> Result<ParallelRecon<'a>> {
        let magnitude = BuiltinMetric::Magnitude.tree();
        let baselines = fan_out(layers.len(), threads, |i| -> Result<Option<f64>> {
            let st = &layers[i];
            let out = evaluate(&magnitude, st, &cfg).expect("magnitude tree is shape-valid");
            let mask = build_mask(&out.values, pattern)
                .map_err(|e| anyhow::anyhow!("{}", e))
                .with_context(|| format!("building baseline mask for layer '{}'", st.name()))?;
            let err = recon_error(st, &mask);
            Ok(if err < cfg.epsilon as f64 { None } else { Some(err) })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(ParallelRecon {
            layers,
            pattern,
            cfg,
            baselines,
            threads,
        })
    }
}

impl FitnessEval for ParallelRecon<'_> {
    fn score(&mut self, tree: &ExprTree) -> FitnessScore {
        enum LayerOutcome {
            Ratio(f64),
            Skipped,
            Unscorable,
        }
        let outcomes = fan_out(self.layers.len(), self.threads, |i| {
            let st = &self.layers[i];
            let out = match evaluate(tree, st, &self.cfg) {
                Ok(out) => out,
                Err(_) => return LayerOutcome::Unscorable,
            };
            if !out.finite {
                return LayerOutcome::Unscorable;
            }
            let mask = match build_mask(&out.values, self.pattern) {
                Ok(m) => m,
                Err(_) => return LayerOutcome::Unscorable,
            };
            match self.baselines[i] {
                Some(base) => LayerOutcome::Ratio(recon_error(st, &mask) / base),
                None => LayerOutcome::Skipped,
            }
        });
        // Combine strictly in layer order for bit-identical results.
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for o in outcomes {
            match o {
                LayerOutcome::Unscorable => return FitnessScore::sentinel(),
                LayerOutcome::Skipped => {}
                LayerOutcome::Ratio(r) => {
                    sum += r;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return FitnessScore::from_value(1.0);
        }
        FitnessScore::from_value(sum / n as f64)
    }
}
