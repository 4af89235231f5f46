//! The `pruner-zero` command line: argument surface and dispatch.
//!
//! Exit codes: 0 success, 1 runtime failure (bad files, degenerate
//! targets, ...), 2 usage (clap parse errors and post-parse validation of
//! flag combinations or argument values).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pruner_zero_core::analysis::{
    collect_candidates, correlation_matrix, top_fitness_correlations, CorrMethod,
};
use pruner_zero_core::bundle::{gen_gaussian, gen_mlp, TensorBundle};
use pruner_zero_core::evolve::{run_random_search, EvolveConfig, EvolveError, SearchState};
use pruner_zero_core::expr::eval::SafeMathConfig;
use pruner_zero_core::expr::{format_expr, parse_expr, shape_check, ExprTree};
use pruner_zero_core::fitness::{
    validate_command_template, FitnessEval, ReconProxy, TargetRecovery,
};
use pruner_zero_core::prune::{BuiltinMetric, LayerStats, SparsityPattern};
use pruner_zero_core::simplify::{oos_simplify, CanonicalKey};

use crate::bundle_file::{read_bundle, write_bundle};
use crate::catalog_file::load_catalog;
use crate::csv_out::write_correlation_csv;
use crate::external::ExternalEval;
use crate::log_file::{read_log_candidates, write_log};
use crate::mask_file::write_mask_file;
use crate::recon::{prune_layers, ParallelRecon};

/// Post-parse validation failure: reported like a clap error, exit 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "pruner-zero",
    version,
    about = "Symbolic pruning metrics: evaluate, prune, and evolve expression trees over layer statistics"
)]
struct Cli {
    /// RNG seed for anything stochastic (generation, search).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Suppress informational stdout (results still print).
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads for per-layer reconstruction; falls back to the
    /// PRUNER_ZERO_THREADS environment variable, then 1.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Record real wall-clock timings in search logs. Off by default
    /// because timings break byte-for-byte reproducibility of the log.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic tensor bundle.
    Gen(GenArgs),
    /// Evaluate a metric expression over every layer of a bundle.
    Eval(EvalArgs),
    /// Prune a bundle with a metric and report reconstruction error.
    Prune(PruneArgs),
    /// Evolve metric expressions with the genetic search.
    Evolve(EvolveArgs),
    /// Random-search baseline over the same expression space.
    Random(RandomArgs),
    /// Simplify an expression with opposing-operation rules.
    Simplify(SimplifyArgs),
    /// Correlate operator usage with fitness from a search log.
    Analyze(AnalyzeArgs),
    /// List the built-in metrics as expression trees.
    Builtin(BuiltinArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Gaussian,
    Mlp,
}

#[derive(Args)]
struct GenArgs {
    /// Generator: independent gaussian layers, or a toy MLP with real
    /// gradients.
    #[arg(long, value_enum)]
    kind: GenKind,

    /// Output bundle path.
    #[arg(long)]
    out: PathBuf,

    /// Layer count (gaussian only; default 2).
    #[arg(long)]
    layers: Option<usize>,

    /// Weight rows per layer (gaussian only; default 32).
    #[arg(long)]
    rows: Option<usize>,

    /// Weight columns per layer (gaussian only; default 64).
    #[arg(long)]
    cols: Option<usize>,

    /// Calibration samples (default 64).
    #[arg(long)]
    samples: Option<usize>,

    /// Comma-separated per-column input scales (gaussian only), e.g.
    /// "10,1,1,1" makes the first input channel 10x louder.
    #[arg(long)]
    anisotropy: Option<String>,

    /// Input width (mlp only; default 32).
    #[arg(long)]
    din: Option<usize>,

    /// Hidden width (mlp only; default 48).
    #[arg(long)]
    hidden: Option<usize>,

    /// Output width (mlp only; default 16).
    #[arg(long)]
    dout: Option<usize>,
}

/// Exactly one of `--expr` / `--builtin` names the metric.
#[derive(Args)]
struct MetricArgs {
    /// Metric expression, e.g. "((G) mul (W))".
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    expr: Option<String>,

    /// Built-in metric name (see the `builtin` subcommand).
    #[arg(long)]
    builtin: Option<String>,
}

impl MetricArgs {
    fn tree(&self) -> Result<ExprTree> {
        if let Some(name) = &self.builtin {
            let b = BuiltinMetric::from_name(name).ok_or_else(|| {
                usage(format!(
                    "unknown builtin '{}' (expected one of: {})",
                    name,
                    builtin_names()
                ))
            })?;
            return Ok(b.tree());
        }
        let text = self.expr.as_deref().expect("clap enforces one of expr/builtin");
        parse_tree_arg(text)
    }
}

fn parse_tree_arg(text: &str) -> Result<ExprTree> {
    let tree = parse_expr(text).map_err(|e| usage(format!("bad expression: {}", e)))?;
    shape_check(&tree).map_err(|e| usage(format!("expression is not matrix-shaped: {}", e)))?;
    Ok(tree)
}

fn builtin_names() -> String {
    BuiltinMetric::ALL
        .iter()
        .map(|b| b.name())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Clone, Copy, Debug)]
struct NmPair {
    n: u32,
    m: u32,
}

fn parse_nm_arg(s: &str) -> Result<NmPair, String> {
    let err = || format!("expected N:M with 1 <= N <= M, got '{}'", s);
    let (a, b) = s.split_once(':').ok_or_else(err)?;
    let n: u32 = a.trim().parse().map_err(|_| err())?;
    let m: u32 = b.trim().parse().map_err(|_| err())?;
    if n == 0 || m == 0 || n > m {
        return Err(err());
    }
    Ok(NmPair { n, m })
}

/// `--sparsity` (unstructured) or `--nm` (N:M), never both.
#[derive(Args)]
struct PatternArgs {
    /// Fraction of weights to prune per row, in [0, 1].
    #[arg(long, conflicts_with = "nm")]
    sparsity: Option<f32>,

    /// N:M pattern, e.g. 2:4 keeps the 2 most salient of every 4.
    #[arg(long, value_parser = parse_nm_arg)]
    nm: Option<NmPair>,
}

impl PatternArgs {
    fn optional(&self) -> Result<Option<SparsityPattern>> {
        if let Some(phi) = self.sparsity {
            if !(0.0..=1.0).contains(&phi) {
                return Err(usage(format!("--sparsity must be in [0, 1], got {}", phi)));
            }
            return Ok(Some(SparsityPattern::Unstructured { phi }));
        }
        if let Some(NmPair { n, m }) = self.nm {
            return Ok(Some(SparsityPattern::NofM { n, m }));
        }
        Ok(None)
    }

    fn required(&self) -> Result<SparsityPattern> {
        self.optional()?
            .ok_or_else(|| usage("a sparsity pattern is required: pass --sparsity or --nm"))
    }
}

/// Safe-math evaluation knobs.
#[derive(Args)]
struct MathArgs {
    /// Epsilon for log/div/scaling guards.
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f32,

    /// Min-max and z-score normalize per row instead of globally.
    #[arg(long)]
    per_row: bool,
}

impl MathArgs {
    fn config(&self) -> Result<SafeMathConfig> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(usage(format!(
                "--epsilon must be a positive finite number, got {}",
                self.epsilon
            )));
        }
        Ok(SafeMathConfig {
            epsilon: self.epsilon,
            per_row_scaling: self.per_row,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Bundle file to evaluate against.
    #[arg(long)]
    bundle: PathBuf,

    #[command(flatten)]
    metric: MetricArgs,

    #[command(flatten)]
    math: MathArgs,
}

#[derive(Args)]
struct PruneArgs {
    /// Bundle file to prune.
    #[arg(long)]
    bundle: PathBuf,

    #[command(flatten)]
    metric: MetricArgs,

    #[command(flatten)]
    pattern: PatternArgs,

    #[command(flatten)]
    math: MathArgs,

    /// Also write the per-layer masks to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FitnessMode {
    /// Reconstruction error relative to the magnitude baseline.
    Recon,
    /// Rank agreement with a known target metric.
    Target,
    /// An external command scores each expression.
    External,
}

#[derive(Args)]
struct FitnessArgs {
    /// How candidate expressions are scored.
    #[arg(long, value_enum)]
    fitness: FitnessMode,

    #[command(flatten)]
    pattern: PatternArgs,

    /// Target metric expression (target mode).
    #[arg(long, conflicts_with = "target_builtin")]
    target_expr: Option<String>,

    /// Target builtin name (target mode).
    #[arg(long)]
    target_builtin: Option<String>,

    /// External command template; every {expr} is replaced by the
    /// candidate expression (external mode).
    #[arg(long)]
    command: Option<String>,

    /// Kill the external command after this many seconds.
    #[arg(long, default_value_t = crate::external::DEFAULT_TIMEOUT_S)]
    timeout_s: u64,
}

impl FitnessArgs {
    /// Rejects flags that belong to a different fitness mode, so a typo'd
    /// invocation fails loudly instead of silently ignoring half of it.
    fn check_mode_flags(&self) -> Result<()> {
        let pattern_given = self.pattern.sparsity.is_some() || self.pattern.nm.is_some();
        let target_given = self.target_expr.is_some() || self.target_builtin.is_some();
        match self.fitness {
            FitnessMode::Recon => {
                if target_given {
                    return Err(usage("--target-expr/--target-builtin only apply to --fitness target"));
                }
                if self.command.is_some() {
                    return Err(usage("--command only applies to --fitness external"));
                }
            }
            FitnessMode::Target => {
                if pattern_given {
                    return Err(usage("--sparsity/--nm only apply to --fitness recon"));
                }
                if self.command.is_some() {
                    return Err(usage("--command only applies to --fitness external"));
                }
            }
            FitnessMode::External => {
                if pattern_given {
                    return Err(usage("--sparsity/--nm only apply to --fitness recon"));
                }
                if target_given {
                    return Err(usage("--target-expr/--target-builtin only apply to --fitness target"));
                }
            }
        }
        Ok(())
    }

    fn target_tree(&self) -> Result<ExprTree> {
        if let Some(name) = &self.target_builtin {
            return BuiltinMetric::from_name(name)
                .map(|b| b.tree())
                .ok_or_else(|| {
                    usage(format!(
                        "unknown builtin '{}' (expected one of: {})",
                        name,
                        builtin_names()
                    ))
                });
        }
        match &self.target_expr {
            Some(text) => parse_tree_arg(text),
            None => Err(usage(
                "--fitness target needs --target-expr or --target-builtin",
            )),
        }
    }

    fn build<'a>(
        &self,
        layers: &'a [LayerStats],
        cfg: &SafeMathConfig,
        threads: usize,
    ) -> Result<Box<dyn FitnessEval + 'a>> {
        self.check_mode_flags()?;
        match self.fitness {
            FitnessMode::Recon => {
                let pattern = self.pattern.required()?;
                if threads > 1 {
                    Ok(Box::new(ParallelRecon::new(layers, pattern, cfg.clone(), threads)?))
                } else {
                    let eval = ReconProxy::new(layers, pattern, cfg.clone())
                        .map_err(|e| anyhow::anyhow!("building reconstruction baseline: {}", e))?;
                    Ok(Box::new(eval))
                }
            }
            FitnessMode::Target => {
                let target = self.target_tree()?;
                let eval = TargetRecovery::new(layers, &target, cfg.clone())
                    .map_err(|e| anyhow::anyhow!("{}", e))?;
                Ok(Box::new(eval))
            }
            FitnessMode::External => {
                let template = self
                    .command
                    .as_ref()
                    .ok_or_else(|| usage("--fitness external needs --command"))?;
                if !validate_command_template(template) {
                    return Err(usage("--command template must contain {expr}"));
                }
                Ok(Box::new(ExternalEval::new(
                    template.clone(),
                    Duration::from_secs(self.timeout_s),
                )))
            }
        }
    }
}

#[derive(Args)]
struct EvolveArgs {
    /// Bundle file the fitness is computed against.
    #[arg(long)]
    bundle: PathBuf,

    #[command(flatten)]
    fitness_args: FitnessArgs,

    #[command(flatten)]
    math: MathArgs,

    /// Search log output (JSON lines).
    #[arg(long)]
    log: PathBuf,

    /// Opposing-operation catalog file (default: built-in rules).
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Population size.
    #[arg(long, default_value_t = 50)]
    pop: usize,

    /// Search iterations (offspring admitted).
    #[arg(long, default_value_t = 300)]
    iters: u64,

    /// Tournament winners kept.
    #[arg(long, default_value_t = 10)]
    topk: usize,

    /// Fraction of the population drawn per tournament.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,

    /// Probability an offspring is mutated.
    #[arg(long, default_value_t = 0.5)]
    mutation: f64,

    /// Minimum tree depth for sampling.
    #[arg(long, default_value_t = 3)]
    depth_min: usize,

    /// Maximum tree depth for sampling.
    #[arg(long, default_value_t = 5)]
    depth_max: usize,

    /// Redraw budget for duplicate or shape-invalid offspring.
    #[arg(long, default_value_t = 32)]
    retry_limit: usize,
}

#[derive(Args)]
struct RandomArgs {
    /// Bundle file the fitness is computed against.
    #[arg(long)]
    bundle: PathBuf,

    #[command(flatten)]
    fitness_args: FitnessArgs,

    #[command(flatten)]
    math: MathArgs,

    /// Search log output (JSON lines).
    #[arg(long)]
    log: PathBuf,

    /// Opposing-operation catalog file (default: built-in rules).
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Trees sampled.
    #[arg(long, default_value_t = 300)]
    iters: u64,

    /// Minimum tree depth for sampling.
    #[arg(long, default_value_t = 3)]
    depth_min: usize,

    /// Maximum tree depth for sampling.
    #[arg(long, default_value_t = 5)]
    depth_max: usize,

    /// Redraw budget for out-of-range samples.
    #[arg(long, default_value_t = 32)]
    retry_limit: usize,
}

#[derive(Args)]
struct SimplifyArgs {
    /// Expression to simplify.
    #[arg(long)]
    expr: String,

    /// Opposing-operation catalog file (default: built-in rules).
    #[arg(long)]
    catalog: Option<PathBuf>,

    /// Also print the canonical key (hex) of the simplified form.
    #[arg(long)]
    show_key: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Search log to harvest candidates from.
    #[arg(long)]
    log: PathBuf,

    /// Correlation CSV output path.
    #[arg(long)]
    out: PathBuf,

    /// Keep only candidates with fitness strictly below this.
    #[arg(long)]
    threshold: Option<f64>,

    /// Use Spearman rank correlation instead of Pearson.
    #[arg(long)]
    spearman: bool,

    /// How many top fitness correlations to print to stderr.
    #[arg(long, default_value_t = 3)]
    top: usize,

    /// Opposing-operation catalog for candidate deduplication.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct BuiltinArgs {
    /// Print just this builtin.
    #[arg(long)]
    name: Option<String>,
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        return Ok(t);
    }
    match std::env::var("PRUNER_ZERO_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(t),
            _ => Err(usage(format!(
                "PRUNER_ZERO_THREADS must be a positive integer, got '{}'",
                v
            ))),
        },
        Err(_) => Ok(1),
    }
}

fn fmt_fitness(v: f64) -> String {
    if v.is_finite() {
        format!("{}", v)
    } else {
        "inf".to_string()
    }
}

fn parse_anisotropy(text: &str) -> Result<Vec<f32>> {
    text.split(',')
        .map(|part| {
            let v: f32 = part
                .trim()
                .parse()
                .map_err(|_| usage(format!("bad anisotropy entry '{}'", part.trim())))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(usage(format!(
                    "anisotropy scales must be positive and finite, got {}",
                    v
                )));
            }
            Ok(v)
        })
        .collect()
}

fn run_gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let bundle: TensorBundle = match args.kind {
        GenKind::Gaussian => {
            for (name, given) in [
                ("--din", args.din.is_some()),
                ("--hidden", args.hidden.is_some()),
                ("--dout", args.dout.is_some()),
            ] {
                if given {
                    return Err(usage(format!("{} only applies to --kind mlp", name)));
                }
            }
            let anis = args.anisotropy.as_deref().map(parse_anisotropy).transpose()?;
            gen_gaussian(
                cli.seed,
                args.layers.unwrap_or(2),
                args.rows.unwrap_or(32),
                args.cols.unwrap_or(64),
                args.samples.unwrap_or(64),
                anis.as_deref(),
            )
            .map_err(|e| usage(format!("{}", e)))?
        }
        GenKind::Mlp => {
            for (name, given) in [
                ("--layers", args.layers.is_some()),
                ("--rows", args.rows.is_some()),
                ("--cols", args.cols.is_some()),
                ("--anisotropy", args.anisotropy.is_some()),
            ] {
                if given {
                    return Err(usage(format!("{} only applies to --kind gaussian", name)));
                }
            }
            gen_mlp(
                cli.seed,
                args.din.unwrap_or(32),
                args.hidden.unwrap_or(48),
                args.dout.unwrap_or(16),
                args.samples.unwrap_or(64),
            )
        }
    };
    write_bundle(&args.out, &bundle)?;
    if !cli.quiet {
        let shapes: Vec<String> = bundle
            .layers
            .iter()
            .map(|l| format!("{} {}x{}", l.name(), l.w().rows(), l.w().cols()))
            .collect();
        println!(
            "wrote {}: kind={} seed={} samples={} [{}]",
            args.out.display(),
            match args.kind {
                GenKind::Gaussian => "gaussian",
                GenKind::Mlp => "mlp",
            },
            cli.seed,
            bundle.layers[0].xcal().rows(),
            shapes.join(", ")
        );
    }
    Ok(())
}

fn run_eval(_cli: &Cli, args: &EvalArgs) -> Result<()> {
    let tree = args.metric.tree()?;
    let cfg = args.math.config()?;
    let bundle = read_bundle(&args.bundle)?;
    for layer in &bundle.layers {
        let out = pruner_zero_core::expr::eval::evaluate(&tree, layer, &cfg)
            .map_err(|e| anyhow::anyhow!("evaluating on layer '{}': {}", layer.name(), e))?;
        let data = out.values.data();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0f64;
        for &v in data {
            let v = v as f64;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        println!(
            "{}: rows={} cols={} min={} max={} mean={} finite={}",
            layer.name(),
            out.values.rows(),
            out.values.cols(),
            min,
            max,
            sum / data.len() as f64,
            out.finite
        );
    }
    Ok(())
}

fn run_prune(cli: &Cli, args: &PruneArgs) -> Result<()> {
    let tree = args.metric.tree()?;
    let pattern = args.pattern.required()?;
    let cfg = args.math.config()?;
    let threads = resolve_threads(cli.threads)?;
    let bundle = read_bundle(&args.bundle)?;
    let results = prune_layers(&bundle.layers, &tree, pattern, &cfg, threads)?;
    let mut total = 0.0f64;
    for r in &results {
        if r.finite_saliency {
            println!("{}: kept={}/{} recon={}", r.name, r.kept, r.total, r.recon);
        } else {
            println!(
                "{}: saliency is non-finite; nothing pruned (recon={})",
                r.name, r.recon
            );
        }
        total += r.recon;
    }
    println!("total: recon={}", total);
    if let Some(out) = &args.out {
        let masks: Vec<(String, pruner_zero_core::prune::SparsityMask)> = results
            .into_iter()
            .map(|r| (r.name, r.mask))
            .collect();
        write_mask_file(out, &masks)?;
        if !cli.quiet {
            println!("wrote masks to {}", out.display());
        }
    }
    Ok(())
}

fn map_evolve_err(e: EvolveError) -> anyhow::Error {
    match e {
        // Bad numeric flags are a usage problem; sampling exhaustion is not.
        EvolveError::Config(c) => usage(format!("{}", c)),
        EvolveError::Sampling(s) => anyhow::anyhow!("{}", s),
    }
}

fn run_evolve(cli: &Cli, args: &EvolveArgs) -> Result<()> {
    let cfg = EvolveConfig {
        population_size: args.pop,
        iterations: args.iters,
        top_k: args.topk,
        sample_ratio: args.ratio,
        mutation_prob: args.mutation,
        depth_min: args.depth_min,
        depth_max: args.depth_max,
        resample_retry_limit: args.retry_limit,
        seed: cli.seed,
    };
    cfg.validate().map_err(|e| usage(format!("{}", e)))?;
    let math_cfg = args.math.config()?;
    let threads = resolve_threads(cli.threads)?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let bundle = read_bundle(&args.bundle)?;
    let mut eval = args.fitness_args.build(&bundle.layers, &math_cfg, threads)?;

    let wall = Instant::now();
    let mut state =
        SearchState::new(cfg.clone(), catalog, eval.as_mut()).map_err(map_evolve_err)?;
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    for _ in 0..cfg.iterations {
        let step_start = Instant::now();
        let mut rec = state.step(eval.as_mut()).map_err(map_evolve_err)?;
        if cli.timing {
            rec.elapsed_ms = step_start.elapsed().as_millis() as u64;
        }
        records.push(rec);
    }
    let mut summary = state.summary();
    if cli.timing {
        summary.wall_ms = wall.elapsed().as_millis() as u64;
    }
    write_log(&args.log, &records, Some((&summary, cfg.iterations, cfg.population_size)))?;
    if !cli.quiet {
        if let (Some(expr), Some(fit)) = (&summary.best_expr, summary.best_fitness) {
            println!("best: {}", expr);
            println!("fitness: {}", fmt_fitness(fit));
        }
        println!("log: {}", args.log.display());
    }
    Ok(())
}

fn run_random(cli: &Cli, args: &RandomArgs) -> Result<()> {
    let cfg = EvolveConfig {
        iterations: args.iters,
        depth_min: args.depth_min,
        depth_max: args.depth_max,
        resample_retry_limit: args.retry_limit,
        seed: cli.seed,
        ..EvolveConfig::default()
    };
    cfg.validate().map_err(|e| usage(format!("{}", e)))?;
    let math_cfg = args.math.config()?;
    let threads = resolve_threads(cli.threads)?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let bundle = read_bundle(&args.bundle)?;
    let mut eval = args.fitness_args.build(&bundle.layers, &math_cfg, threads)?;

    let wall = Instant::now();
    let (records, mut summary) =
        run_random_search(&cfg, &catalog, eval.as_mut()).map_err(map_evolve_err)?;
    if cli.timing {
        summary.wall_ms = wall.elapsed().as_millis() as u64;
    }
    // A zero budget leaves a genuinely empty file: no records, no summary.
    let trailer = if cfg.iterations == 0 {
        None
    } else {
        Some((&summary, cfg.iterations, 0usize))
    };
    write_log(&args.log, &records, trailer)?;
    if !cli.quiet {
        match (&summary.best_expr, summary.best_fitness) {
            (Some(expr), Some(fit)) => {
                println!("best: {}", expr);
                println!("fitness: {}", fmt_fitness(fit));
            }
            _ => println!("no iterations run"),
        }
        println!("log: {}", args.log.display());
    }
    Ok(())
}

fn run_simplify(_cli: &Cli, args: &SimplifyArgs) -> Result<()> {
    let tree = parse_expr(&args.expr).map_err(|e| usage(format!("bad expression: {}", e)))?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let simplified = oos_simplify(&tree, &catalog);
    println!("{}", format_expr(&simplified));
    if args.show_key {
        println!("key: {:032x}", CanonicalKey::of_simplified(&simplified).bits());
    }
    Ok(())
}

fn run_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<()> {
    let catalog = load_catalog(args.catalog.as_deref())?;
    let entries = read_log_candidates(&args.log)?;
    let threshold = args.threshold.unwrap_or(f64::INFINITY);
    let records = collect_candidates(entries, threshold, &catalog)
        .map_err(|e| anyhow::anyhow!("harvesting candidates from {}: {}", args.log.display(), e))?;
    let method = if args.spearman {
        CorrMethod::Spearman
    } else {
        CorrMethod::Pearson
    };
    let matrix = correlation_matrix(&records, method)
        .map_err(|e| anyhow::anyhow!("{} (after filtering {})", e, args.log.display()))?;
    write_correlation_csv(&args.out, &matrix)?;
    let top = top_fitness_correlations(&matrix, args.top);
    if !top.is_empty() {
        eprintln!("top operator correlations with fitness:");
        for (label, v) in top {
            eprintln!("  {}: {}", label, v);
        }
    }
    if !cli.quiet {
        println!("wrote {} ({} candidates)", args.out.display(), records.len());
    }
    Ok(())
}

fn run_builtin(args: &BuiltinArgs) -> Result<()> {
    match &args.name {
        Some(name) => {
            let b = BuiltinMetric::from_name(name).ok_or_else(|| {
                usage(format!(
                    "unknown builtin '{}' (expected one of: {})",
                    name,
                    builtin_names()
                ))
            })?;
            println!("{}: {}", b.name(), format_expr(&b.tree()));
        }
        None => {
            for b in BuiltinMetric::ALL {
                println!("{}: {}", b.name(), format_expr(&b.tree()));
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Gen(args) => run_gen(cli, args),
        Cmd::Eval(args) => run_eval(cli, args),
        Cmd::Prune(args) => run_prune(cli, args),
        Cmd::Evolve(args) => run_evolve(cli, args),
        Cmd::Random(args) => run_random(cli, args),
        Cmd::Simplify(args) => run_simplify(cli, args),
        Cmd::Analyze(args) => run_analyze(cli, args),
        Cmd::Builtin(args) => run_builtin(args),
    }
}

/// Binary entry point; maps errors to the documented exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

