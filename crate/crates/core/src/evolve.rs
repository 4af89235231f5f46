//! Steady-state genetic search over expression trees.
//!
//! One iteration: tournament-select two parents, cross them over, maybe
//! mutate, OOS-simplify, resample if the offspring collapses onto a parent
//! or an existing member, score through the cache, admit, evict the worst.
//! Every random draw goes through a single seeded RNG in a fixed order, so
//! a (seed, config) pair fully determines the run.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{shape_check, ExprTree, Leaf, OpKind};
use crate::fitness::{FitnessCache, FitnessEval, FitnessScore};
use crate::sample::{random_tree, random_tree_shaped, ExhaustedRetries, GrowMethod};
use crate::simplify::{oos_simplify, CanonicalKey, OOSCatalog};

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveConfig {
    pub population_size: usize,
    pub iterations: u64,
    /// Winners kept from each tournament draw.
    pub top_k: usize,
    /// Fraction of the population drawn into each tournament.
    pub sample_ratio: f64,
    /// Probability that an offspring is mutated at all.
    pub mutation_prob: f64,
    pub depth_min: usize,
    pub depth_max: usize,
    /// Redraw budget for crossover shape failures and duplicate offspring.
    pub resample_retry_limit: usize,
    pub seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> EvolveConfig {
        EvolveConfig {
            population_size: 50,
            iterations: 300,
            top_k: 10,
            sample_ratio: 0.5,
            mutation_prob: 0.5,
            depth_min: 3,
            depth_max: 5,
            resample_retry_limit: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError(pub String);

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "invalid evolve config: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ConfigError {}

impl EvolveConfig {
    /// Number of members drawn into a tournament: `ceil(sample_ratio * P)`.
    pub fn tournament_draw(&self) -> usize {
        let raw = self.sample_ratio * self.population_size as f64;
        // Manual ceiling: f64::ceil is not available without std.
        let mut c = raw as usize;
        if (c as f64) < raw {
            c += 1;
        }
        c.max(1).min(self.population_size)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        use alloc::format;
        if self.population_size == 0 {
            return Err(ConfigError(String::from("population size must be at least 1")));
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(ConfigError(format!(
                "sample ratio must be in (0, 1], got {}",
                self.sample_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(ConfigError(format!(
                "mutation probability must be in [0, 1], got {}",
                self.mutation_prob
            )));
        }
        if self.depth_min < 1 || self.depth_min > self.depth_max {
            return Err(ConfigError(format!(
                "depth range must satisfy 1 <= min <= max, got {}..{}",
                self.depth_min, self.depth_max
            )));
        }
        if self.top_k == 0 || self.top_k > self.tournament_draw() {
            return Err(ConfigError(format!(
                "top-k must be in 1..={} (the tournament draw), got {}",
                self.tournament_draw(),
                self.top_k
            )));
        }
        if self.resample_retry_limit == 0 {
            return Err(ConfigError(String::from("resample retry limit must be at least 1")));
        }
        Ok(())
    }
}

/// A scored population member. `insertion_index` is a global admission
/// counter used for age tie-breaks.
#[derive(Clone, Debug)]
pub struct Member {
    pub tree: ExprTree,
    pub key: CanonicalKey,
    pub score: FitnessScore,
    pub node_count: usize,
    pub insertion_index: u64,
}

/// Selection order: score, then fewer nodes, then older member.
fn rank_cmp(a: &Member, b: &Member) -> core::cmp::Ordering {
    a.score
        .cmp_value(b.score)
        .then(a.node_count.cmp(&b.node_count))
        .then(a.insertion_index.cmp(&b.insertion_index))
}

#[derive(Debug, Default)]
pub struct Population {
    members: Vec<Member>,
}

impl Population {
    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn contains_key(&self, key: CanonicalKey) -> bool {
        self.members.iter().any(|m| m.key == key)
    }

    /// Best member under the selection order. Panics on an empty population.
    pub fn best(&self) -> &Member {
        self.members
            .iter()
            .min_by(|a, b| rank_cmp(a, b))
            .expect("population is never empty")
    }

    /// Eviction target: highest score, ties broken toward the newest member.
    pub fn worst_index(&self) -> usize {
        let mut worst = 0;
        for i in 1..self.members.len() {
            let (a, b) = (&self.members[i], &self.members[worst]);
            let ord = a
                .score
                .cmp_value(b.score)
                .then(a.insertion_index.cmp(&b.insertion_index));
            if ord == core::cmp::Ordering::Greater {
                worst = i;
            }
        }
        worst
    }
}

/// Draws `draw` distinct member indices, ranks them, keeps the best
/// `top_k`, and picks two parents uniformly (with replacement) from those.
pub fn tournament_select<R: Rng>(
    rng: &mut R,
    pop: &Population,
    draw: usize,
    top_k: usize,
) -> (usize, usize) {
    let n = pop.members().len();
    let mut idx: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first `draw` slots become the sample.
    for i in 0..draw.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(draw.min(n));
    idx.sort_by(|&a, &b| rank_cmp(&pop.members()[a], &pop.members()[b]));
    let winners = &idx[..top_k.min(idx.len())];
    let p1 = winners[rng.gen_range(0..winners.len())];
    let p2 = winners[rng.gen_range(0..winners.len())];
    (p1, p2)
}

/// Replaces the subtree at preorder index `at1` of `parent1` with the
/// subtree at `at2` of `parent2`. `None` if an index is out of range or
/// the spliced tree fails the shape check.
pub fn crossover_at(
    parent1: &ExprTree,
    parent2: &ExprTree,
    at1: usize,
    at2: usize,
) -> Option<ExprTree> {
    let donor = parent2.subtree(at2)?;
    let child = parent1.with_replaced(at1, donor)?;
    if shape_check(&child).is_ok() {
        Some(child)
    } else {
        None
    }
}

/// Uniform-node crossover with shape redraws; falls back to a copy of
/// `parent1` once the retry budget is spent.
pub fn crossover<R: Rng>(
    rng: &mut R,
    parent1: &ExprTree,
    parent2: &ExprTree,
    retry_limit: usize,
) -> ExprTree {
    let n1 = parent1.node_count();
    let n2 = parent2.node_count();
    for _ in 0..retry_limit {
        let at1 = rng.gen_range(0..n1);
        let at2 = rng.gen_range(0..n2);
        if let Some(child) = crossover_at(parent1, parent2, at1, at2) {
            return child;
        }
    }
    parent1.clone()
}

/// What occupies a node, for mutation candidate listing.
enum NodeSlot {
    Leaf(Leaf),
    Op(OpKind),
}

fn slot_at(tree: &ExprTree, at: usize) -> NodeSlot {
    match tree.subtree(at).expect("index in range") {
        ExprTree::Leaf(l) => NodeSlot::Leaf(*l),
        ExprTree::Unary(op, _) | ExprTree::Binary(op, _, _) => NodeSlot::Op(*op),
    }
}

/// True iff the node at preorder index `at` is the operand of a unary op.
fn parent_is_unary(tree: &ExprTree, at: usize) -> bool {
    fn descend(tree: &ExprTree, at: usize, under_unary: bool) -> bool {
        if at == 0 {
            return under_unary;
        }
        match tree {
            ExprTree::Leaf(_) => unreachable!("index validated by caller"),
            ExprTree::Unary(_, c) => descend(c, at - 1, true),
            ExprTree::Binary(_, l, r) => {
                let ln = l.node_count();
                if at - 1 < ln {
                    descend(l, at - 1, false)
                } else {
                    descend(r, at - 1 - ln, false)
                }
            }
        }
    }
    descend(tree, at, false)
}

/// Rebuilds the tree with the node at preorder index `at` re-labelled;
/// structure (and therefore preorder indexing) is unchanged.
fn with_slot(tree: &ExprTree, at: usize, slot: &NodeSlot) -> ExprTree {
    fn walk(t: &ExprTree, at: usize, next: &mut usize, slot: &NodeSlot) -> ExprTree {
        let here = *next;
        *next += 1;
        match t {
            ExprTree::Leaf(l) => {
                if here == at {
                    match slot {
                        NodeSlot::Leaf(nl) => ExprTree::Leaf(*nl),
                        NodeSlot::Op(_) => unreachable!("arity preserved by candidate listing"),
                    }
                } else {
                    ExprTree::Leaf(*l)
                }
            }
            ExprTree::Unary(op, c) => {
                let nop = if here == at {
                    match slot {
                        NodeSlot::Op(k) => *k,
                        NodeSlot::Leaf(_) => unreachable!("arity preserved by candidate listing"),
                    }
                } else {
                    *op
                };
                ExprTree::Unary(nop, alloc::boxed::Box::new(walk(c, at, next, slot)))
            }
            ExprTree::Binary(op, l, r) => {
                let nop = if here == at {
                    match slot {
                        NodeSlot::Op(k) => *k,
                        NodeSlot::Leaf(_) => unreachable!("arity preserved by candidate listing"),
                    }
                } else {
                    *op
                };
                let nl = walk(l, at, next, slot);
                let nr = walk(r, at, next, slot);
                ExprTree::Binary(nop, alloc::boxed::Box::new(nl), alloc::boxed::Box::new(nr))
            }
        }
    }
    let mut next = 0;
    walk(tree, at, &mut next, slot)
}

/// Point mutation. One coin at probability `prob` decides whether the tree
/// is mutated at all; if so, each node independently re-labels with
/// probability `1 / node_count`, drawing uniformly from the same-arity
/// alternatives that keep the whole tree shape-valid (operands of unary
/// ops additionally never become `X`). Nodes with no valid alternative are
/// left untouched.
pub fn mutate<R: Rng>(rng: &mut R, tree: &ExprTree, prob: f64) -> ExprTree {
    if prob <= 0.0 || !rng.gen_bool(prob) {
        return tree.clone();
    }
    let n = tree.node_count();
    let per_node = 1.0 / n as f64;
    let mut current = tree.clone();
    for at in 0..n {
        if !rng.gen_bool(per_node) {
            continue;
        }
        let candidates: Vec<NodeSlot> = match slot_at(&current, at) {
            NodeSlot::Leaf(l) => {
                let under_unary = parent_is_unary(&current, at);
                Leaf::ALL
                    .iter()
                    .filter(|&&c| c != l && !(under_unary && c == Leaf::X))
                    .map(|&c| NodeSlot::Leaf(c))
                    .collect()
            }
            NodeSlot::Op(op) => OpKind::ALL
                .iter()
                .filter(|&&c| c != op && c.arity() == op.arity())
                .map(|&c| NodeSlot::Op(c))
                .collect(),
        };
        let valid: Vec<&NodeSlot> = candidates
            .iter()
            .filter(|slot| shape_check(&with_slot(&current, at, slot)).is_ok())
            .collect();
        if valid.is_empty() {
            continue;
        }
        let pick = valid[rng.gen_range(0..valid.len())];
        current = with_slot(&current, at, pick);
    }
    current
}

/// One line of the search log; serialized by the CLI.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchLogRecord {
    pub iter: u64,
    pub offspring_expr: String,
    /// `+inf` encodes the sentinel.
    pub offspring_fitness: f64,
    pub best_expr: String,
    pub best_fitness: f64,
    pub pop_size: usize,
    pub cache_hits: u64,
    /// Zero unless timing is explicitly enabled by the caller.
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchSummary {
    pub best_expr: Option<String>,
    pub best_fitness: Option<f64>,
    pub total_cache_hits: u64,
    /// Times an offspring was admitted despite duplicating an existing
    /// member's canonical key (retry budget exhausted).
    pub uniqueness_waivers: u64,
    /// Zero unless timing is explicitly enabled by the caller.
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvolveError {
    Config(ConfigError),
    Sampling(ExhaustedRetries),
}

impl core::fmt::Display for EvolveError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvolveError::Config(e) => write!(f, "{}", e),
            EvolveError::Sampling(e) => write!(f, "{}", e),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvolveError {}

impl From<ConfigError> for EvolveError {
    fn from(e: ConfigError) -> EvolveError {
        EvolveError::Config(e)
    }
}

impl From<ExhaustedRetries> for EvolveError {
    fn from(e: ExhaustedRetries) -> EvolveError {
        EvolveError::Sampling(e)
    }
}

/// Live search state; `step` advances one iteration.
pub struct SearchState {
    cfg: EvolveConfig,
    catalog: OOSCatalog,
    rng: ChaCha8Rng,
    pop: Population,
    cache: FitnessCache,
    next_insertion: u64,
    waivers: u64,
    iter: u64,
}

impl SearchState {
    /// Builds and scores the initial population. Ramped half-and-half:
    /// member `i` uses Grow for even `i`, Full for odd, with target depth
    /// cycling `depth_min..=depth_max`. Duplicate canonical keys are
    /// redrawn up to the retry limit, then admitted with a waiver.
    pub fn new(
        cfg: EvolveConfig,
        catalog: OOSCatalog,
        eval: &mut dyn FitnessEval,
    ) -> Result<SearchState, EvolveError> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut st = SearchState {
            pop: Population::default(),
            cache: FitnessCache::new(),
            next_insertion: 0,
            waivers: 0,
            iter: 0,
            cfg,
            catalog,
            rng,
        };
        let span = st.cfg.depth_max - st.cfg.depth_min + 1;
        for i in 0..st.cfg.population_size {
            let method = if i % 2 == 0 { GrowMethod::Grow } else { GrowMethod::Full };
            let target = st.cfg.depth_min + i % span;
            let mut tree = random_tree_shaped(
                &mut st.rng,
                method,
                target,
                st.cfg.depth_min,
                st.cfg.depth_max,
            )?;
            let mut key = CanonicalKey::of(&tree, &st.catalog);
            let mut tries = 0;
            while st.pop.contains_key(key) && tries < st.cfg.resample_retry_limit {
                tree = random_tree(&mut st.rng, st.cfg.depth_min, st.cfg.depth_max)?;
                key = CanonicalKey::of(&tree, &st.catalog);
                tries += 1;
            }
            if st.pop.contains_key(key) {
                st.waivers += 1;
            }
            st.admit(tree, key, eval);
        }
        Ok(st)
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn cache(&self) -> &FitnessCache {
        &self.cache
    }

    pub fn uniqueness_waivers(&self) -> u64 {
        self.waivers
    }

    /// Scores through the cache and appends a member. The cached value is
    /// always the canonical (OOS-simplified) form's score, so equivalent
    /// trees can never diverge.
    fn admit(&mut self, tree: ExprTree, key: CanonicalKey, eval: &mut dyn FitnessEval) {
        let catalog = &self.catalog;
        let score = self
            .cache
            .get_or_insert_with(key, || eval.score(&oos_simplify(&tree, catalog)));
        let node_count = tree.node_count();
        self.pop.members.push(Member {
            tree,
            key,
            score,
            node_count,
            insertion_index: self.next_insertion,
        });
        self.next_insertion += 1;
    }

    /// Draws a fresh simplified random tree (used when an offspring
    /// collapses onto a parent or duplicates an existing member).
    fn resample(&mut self) -> Result<(ExprTree, CanonicalKey), EvolveError> {
        let raw = random_tree(&mut self.rng, self.cfg.depth_min, self.cfg.depth_max)?;
        let tree = oos_simplify(&raw, &self.catalog);
        let key = CanonicalKey::of_simplified(&tree);
        Ok((tree, key))
    }

    /// One steady-state iteration; returns the log record for it.
    pub fn step(&mut self, eval: &mut dyn FitnessEval) -> Result<SearchLogRecord, EvolveError> {
        self.iter += 1;
        let draw = self.cfg.tournament_draw();
        let (i1, i2) = tournament_select(&mut self.rng, &self.pop, draw, self.cfg.top_k);
        let (p1_tree, p1_key) = (self.pop.members[i1].tree.clone(), self.pop.members[i1].key);
        let (p2_tree, p2_key) = (self.pop.members[i2].tree.clone(), self.pop.members[i2].key);

        let crossed = crossover(
            &mut self.rng,
            &p1_tree,
            &p2_tree,
            self.cfg.resample_retry_limit,
        );
        let mutated = mutate(&mut self.rng, &crossed, self.cfg.mutation_prob);
        let mut child = oos_simplify(&mutated, &self.catalog);
        let mut key = CanonicalKey::of_simplified(&child);

        // Offspring equivalent to a parent adds nothing: resample fresh.
        if key == p1_key || key == p2_key {
            let (t, k) = self.resample()?;
            child = t;
            key = k;
        }
        // Population-wide uniqueness, with a bounded retry budget.
        let mut tries = 0;
        while self.pop.contains_key(key) && tries < self.cfg.resample_retry_limit {
            let (t, k) = self.resample()?;
            child = t;
            key = k;
            tries += 1;
        }
        if self.pop.contains_key(key) {
            self.waivers += 1;
        }

        let offspring_expr = crate::expr::format_expr(&child);
        self.admit(child, key, eval);
        let worst = self.pop.worst_index();
        self.pop.members.remove(worst);

        let best = self.pop.best();
        Ok(SearchLogRecord {
            iter: self.iter,
            offspring_expr,
            offspring_fitness: self
                .cache
                .get(key)
                .expect("offspring was just scored")
                .value,
            best_expr: crate::expr::format_expr(&best.tree),
            best_fitness: best.score.value,
            pop_size: self.pop.members.len(),
            cache_hits: self.cache.hits(),
            elapsed_ms: 0,
        })
    }

    pub fn summary(&self) -> SearchSummary {
        let best = self.pop.best();
        SearchSummary {
            best_expr: Some(crate::expr::format_expr(&best.tree)),
            best_fitness: Some(best.score.value),
            total_cache_hits: self.cache.hits(),
            uniqueness_waivers: self.waivers,
            wall_ms: 0,
        }
    }
}

/// Runs the full genetic search: init plus `iterations` steps.
pub fn run_evolution(
    cfg: &EvolveConfig,
    catalog: &OOSCatalog,
    eval: &mut dyn FitnessEval,
) -> Result<(Vec<SearchLogRecord>, SearchSummary), EvolveError> {
    let mut st = SearchState::new(cfg.clone(), catalog.clone(), eval)?;
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    for _ in 0..cfg.iterations {
        records.push(st.step(eval)?);
    }
    Ok((records, st.summary()))
}

/// Baseline: the same sampling distribution and scoring, no selection
/// pressure. `pop_size` is reported as 0 in every record; a zero budget
/// yields an empty log and an empty-best summary.
pub fn run_random_search(
    cfg: &EvolveConfig,
    catalog: &OOSCatalog,
    eval: &mut dyn FitnessEval,
) -> Result<(Vec<SearchLogRecord>, SearchSummary), EvolveError> {
    cfg.validate().map_err(EvolveError::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = FitnessCache::new();
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    let mut best: Option<(ExprTree, FitnessScore, usize, u64)> = None;
    for it in 1..=cfg.iterations {
        let raw = random_tree(&mut rng, cfg.depth_min, cfg.depth_max)?;
        let tree = oos_simplify(&raw, catalog);
        let key = CanonicalKey::of_simplified(&tree);
        let score = cache.get_or_insert_with(key, || eval.score(&tree));
        let nodes = tree.node_count();
        let better = match &best {
            None => true,
            Some((_, bs, bn, bi)) => {
                score
                    .cmp_value(*bs)
                    .then(nodes.cmp(bn))
                    .then(it.cmp(bi))
                    == core::cmp::Ordering::Less
            }
        };
        if better {
            best = Some((tree.clone(), score, nodes, it));
        }
        let (bt, bsc, _, _) = best.as_ref().expect("set above");
        records.push(SearchLogRecord {
            iter: it,
            offspring_expr: crate::expr::format_expr(&tree),
            offspring_fitness: score.value,
            best_expr: crate::expr::format_expr(bt),
            best_fitness: bsc.value,
            pop_size: 0,
            cache_hits: cache.hits(),
            elapsed_ms: 0,
        });
    }
    let summary = SearchSummary {
        best_expr: best.as_ref().map(|(t, _, _, _)| crate::expr::format_expr(t)),
        best_fitness: best.as_ref().map(|(_, s, _, _)| s.value),
        total_cache_hits: cache.hits(),
        uniqueness_waivers: 0,
        wall_ms: 0,
    };
    Ok((records, summary))
}
