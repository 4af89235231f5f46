//! Opposing-operation simplification (OOS) and structural equivalence.
//!
//! Randomly drawn trees are full of dead weight: `exp` wrapped around
//! `log`, stacked `abs`, explicit skips. OOS rewrites these away with a
//! bottom-up pass repeated to a fixpoint, driven by a data catalog:
//!
//! * `opposing_pairs`: unary-over-unary combinations `(outer, inner)` where
//!   both nodes cancel, e.g. `exp(log(t)) -> t`;
//! * `idempotent_ops`: consecutive identical applications collapse to one,
//!   e.g. `abs(abs(t)) -> abs(t)`;
//! * `removable_ops`: always spliced out, e.g. `skp(t) -> t`.
//!
//! `pow` has a fixed exponent of 2, so catalog matching treats it as `sqr`.
//! The rewrites preserve values on strictly positive inputs (safe-math
//! folds `sqrt`/`log` through absolute values, so e.g. `sqrt(sqr(t)) = |t|`
//! in general). Two trees are *equivalent* when their simplified forms
//! print identically; [`CanonicalKey`] is a digest of that canonical string
//! and doubles as the fitness-cache key. Commutativity is deliberately not
//! recognized: `mul(W, G)` and `mul(G, W)` stay distinct.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use core::fmt;

use rand::Rng;

use crate::expr::{format_expr, ExprTree, OpKind};
use crate::sample::{random_tree, ExhaustedRetries};

/// Rewrite catalog. Construct with [`OOSCatalog::default`] for the stock
/// rules or parse one from text with [`OOSCatalog::parse`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OOSCatalog {
    opposing_pairs: BTreeSet<(OpKind, OpKind)>,
    idempotent_ops: BTreeSet<OpKind>,
    removable_ops: BTreeSet<OpKind>,
    /// Also rewrite `sub(a, neg(b)) -> add(a, b)`. Off by default: it
    /// changes a node's kind rather than deleting nodes, and the stock
    /// search does not use it.
    pub rewrite_sub_neg: bool,
}

impl Default for OOSCatalog {
    fn default() -> OOSCatalog {
        let mut opposing_pairs = BTreeSet::new();
        for pair in [
            (OpKind::Exp, OpKind::Log),
            (OpKind::Log, OpKind::Exp),
            (OpKind::Sqrt, OpKind::Sqr),
            (OpKind::Sqr, OpKind::Sqrt),
            (OpKind::Neg, OpKind::Neg),
        ] {
            opposing_pairs.insert(pair);
        }
        let idempotent_ops = BTreeSet::from([OpKind::Abs, OpKind::Mms]);
        let removable_ops = BTreeSet::from([OpKind::Skp]);
        OOSCatalog {
            opposing_pairs,
            idempotent_ops,
            removable_ops,
            rewrite_sub_neg: false,
        }
    }
}

/// Catalog lookups see `pow` as `sqr` (both square their input).
fn canon(op: OpKind) -> OpKind {
    if op == OpKind::Pow {
        OpKind::Sqr
    } else {
        op
    }
}

impl OOSCatalog {
    pub fn empty() -> OOSCatalog {
        OOSCatalog {
            opposing_pairs: BTreeSet::new(),
            idempotent_ops: BTreeSet::new(),
            removable_ops: BTreeSet::new(),
            rewrite_sub_neg: false,
        }
    }

    pub fn is_opposing(&self, outer: OpKind, inner: OpKind) -> bool {
        self.opposing_pairs.contains(&(canon(outer), canon(inner)))
    }

    pub fn is_idempotent(&self, op: OpKind) -> bool {
        self.idempotent_ops.contains(&canon(op))
    }

    pub fn is_removable(&self, op: OpKind) -> bool {
        self.removable_ops.contains(&canon(op))
    }

    /// Parses the line-oriented catalog syntax:
    ///
    /// ```text
    /// # comment
    /// pair exp log
    /// idempotent abs
    /// remove skp
    /// ```
    ///
    /// The result replaces (not extends) the default catalog. All named
    /// operations must be unary.
    pub fn parse(text: &str) -> Result<OOSCatalog, CatalogError> {
        let mut cat = OOSCatalog::empty();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            let mut words = content.split_whitespace();
            let Some(directive) = words.next() else {
                continue;
            };
            let unary_op = |w: Option<&str>| -> Result<OpKind, CatalogError> {
                let w = w.ok_or(CatalogError {
                    line,
                    kind: CatalogErrorKind::MissingOperand,
                })?;
                let op = OpKind::from_token(w).ok_or_else(|| CatalogError {
                    line,
                    kind: CatalogErrorKind::UnknownOp(String::from(w)),
                })?;
                if op.arity() != 1 {
                    return Err(CatalogError {
                        line,
                        kind: CatalogErrorKind::NotUnary(op),
                    });
                }
                Ok(op)
            };
            match directive {
                "pair" => {
                    let outer = unary_op(words.next())?;
                    let inner = unary_op(words.next())?;
                    cat.opposing_pairs.insert((outer, inner));
                }
                "idempotent" => {
                    let op = unary_op(words.next())?;
                    cat.idempotent_ops.insert(op);
                }
                "remove" => {
                    let op = unary_op(words.next())?;
                    cat.removable_ops.insert(op);
                }
                other => {
                    return Err(CatalogError {
                        line,
                        kind: CatalogErrorKind::UnknownDirective(String::from(other)),
                    })
                }
            }
            if let Some(extra) = words.next() {
                return Err(CatalogError {
                    line,
                    kind: CatalogErrorKind::TrailingWords(String::from(extra)),
                });
            }
        }
        Ok(cat)
    }

    /// Fraction of `n_trees` random trees of exactly `depth` that OOS
    /// strictly shrinks. Depth-1 trees are leaves, so the answer there is
    /// always 0.
    pub fn effective_probability<R: Rng>(
        &self,
        depth: usize,
        n_trees: usize,
        rng: &mut R,
    ) -> Result<f64, ExhaustedRetries> {
        let mut hits = 0usize;
        for _ in 0..n_trees {
            let t = random_tree(rng, depth, depth)?;
            if oos_simplify(&t, self).node_count() < t.node_count() {
                hits += 1;
            }
        }
        Ok(hits as f64 / n_trees as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalogError {
    pub line: usize,
    pub kind: CatalogErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CatalogErrorKind {
    UnknownDirective(String),
    UnknownOp(String),
    NotUnary(OpKind),
    MissingOperand,
    TrailingWords(String),
}

impl fmt::Display for CatalogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "catalog line {}: ", self.line)?;
        match &self.kind {
            CatalogErrorKind::UnknownDirective(d) => {
                write!(f, "unknown directive `{}` (expected pair/idempotent/remove)", d)
            }
            CatalogErrorKind::UnknownOp(w) => write!(f, "unknown operation `{}`", w),
            CatalogErrorKind::NotUnary(op) => {
                write!(f, "operation `{}` is not unary", op.token())
            }
            CatalogErrorKind::MissingOperand => write!(f, "missing operation name"),
            CatalogErrorKind::TrailingWords(w) => write!(f, "unexpected trailing `{}`", w),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CatalogError {}

/// One bottom-up rewrite pass. Children are simplified first, so a splice
/// can expose a new redex at the current node within the same pass.
fn pass(tree: &ExprTree, cat: &OOSCatalog) -> ExprTree {
    match tree {
        ExprTree::Leaf(_) => tree.clone(),
        ExprTree::Unary(op, child) => {
            let child = pass(child, cat);
            if cat.is_removable(*op) {
                return child;
            }
            if let ExprTree::Unary(inner, grandchild) = &child {
                if cat.is_opposing(*op, *inner) {
                    return (**grandchild).clone();
                }
                if *op == *inner && cat.is_idempotent(*op) {
                    return child;
                }
            }
            ExprTree::Unary(*op, alloc::boxed::Box::new(child))
        }
        ExprTree::Binary(op, l, r) => {
            let l = pass(l, cat);
            let r = pass(r, cat);
            if cat.rewrite_sub_neg && *op == OpKind::Sub {
                if let ExprTree::Unary(OpKind::Neg, b) = &r {
                    return ExprTree::Binary(
                        OpKind::Add,
                        alloc::boxed::Box::new(l),
                        b.clone(),
                    );
                }
            }
            ExprTree::Binary(*op, alloc::boxed::Box::new(l), alloc::boxed::Box::new(r))
        }
    }
}

/// Simplifies to a fixpoint. Never grows the tree; the result is
/// well-formed and has the same shape class as the input.
pub fn oos_simplify(tree: &ExprTree, cat: &OOSCatalog) -> ExprTree {
    let mut cur = pass(tree, cat);
    loop {
        let next = pass(&cur, cat);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Digest of the canonical (simplified, formatted) form of a tree.
///
/// 128-bit FNV-1a over the canonical string: deterministic across
/// platforms, and wide enough that collisions within a run are not a
/// realistic concern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalKey(u128);

const FNV128_OFFSET: u128 = 0x6c62272e07bb014262b821756295c58d;
const FNV128_PRIME: u128 = 0x0000000001000000000000000000013b;

impl CanonicalKey {
    pub fn of(tree: &ExprTree, cat: &OOSCatalog) -> CanonicalKey {
        CanonicalKey::of_simplified(&oos_simplify(tree, cat))
    }

    /// Raw 128-bit digest, for display and storage.
    pub fn bits(self) -> u128 {
        self.0
    }

    /// Skips the simplify step; only sound on trees already in simplified
    /// form (e.g. population members).
    pub fn of_simplified(tree: &ExprTree) -> CanonicalKey {
        let s = format_expr(tree);
        let mut h = FNV128_OFFSET;
        for b in s.as_bytes() {
            h ^= *b as u128;
            h = h.wrapping_mul(FNV128_PRIME);
        }
        CanonicalKey(h)
    }

    pub fn as_u128(self) -> u128 {
        self.0
    }
}

/// Structural equivalence modulo the catalog: equal canonical keys.
pub fn is_equivalent(a: &ExprTree, b: &ExprTree, cat: &OOSCatalog) -> bool {
    CanonicalKey::of(a, cat) == CanonicalKey::of(b, cat)
}

/// Histogram of op counts in the fixed vocabulary order, padded with
/// zeros; used by the analysis module's correlation columns.
pub fn op_counts_vector(tree: &ExprTree) -> [usize; 17] {
    let hist: BTreeMap<OpKind, usize> = tree.op_histogram();
    let mut v = [0usize; 17];
    for (op, n) in hist {
        v[op.index()] = n;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, shape_check, Leaf};
    use crate::matrix::Matrix;
    use crate::prune::LayerStats;
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simp(s: &str) -> ExprTree {
        oos_simplify(&parse_expr(s).unwrap(), &OOSCatalog::default())
    }

    fn tree(s: &str) -> ExprTree {
        parse_expr(s).unwrap()
    }

    #[test]
    fn cancels_opposing_pairs() {
        assert_eq!(simp("((W) log (#)) exp (#)"), tree("W"));
        assert_eq!(simp("((W) exp (#)) log (#)"), tree("W"));
        assert_eq!(simp("(((G) abs (#)) sqr (#)) sqrt (#)"), tree("(G) abs (#)"));
        assert_eq!(simp("((W) sqrt (#)) sqr (#)"), tree("W"));
        assert_eq!(simp("((W) neg (#)) neg (#)"), tree("W"));
    }

    #[test]
    fn pow_participates_like_sqr() {
        assert_eq!(simp("((W) pow (#)) sqrt (#)"), tree("W"));
        assert_eq!(simp("((W) sqrt (#)) pow (#)"), tree("W"));
    }

    #[test]
    fn collapses_idempotent_runs_and_removes_skips() {
        assert_eq!(simp("((W) abs (#)) abs (#)"), tree("(W) abs (#)"));
        assert_eq!(simp("((G) mms (#)) mms (#)"), tree("(G) mms (#)"));
        assert_eq!(simp("((W) skp (#)) skp (#)"), tree("W"));
        assert_eq!(simp("(W) skp (#)"), tree("W"));
    }

    #[test]
    fn splice_exposes_new_redex() {
        // skp removal brings sqr under sqrt within the same pass.
        assert_eq!(simp("(((W) sqr (#)) skp (#)) sqrt (#)"), tree("W"));
        // Nested neg pairs need the fixpoint loop.
        assert_eq!(simp("((((W) neg (#)) neg (#)) neg (#)) neg (#)"), tree("W"));
    }

    #[test]
    fn leaves_irreducible_trees_alone() {
        let t = tree("((W) abs (#)) mul (G)");
        assert_eq!(oos_simplify(&t, &OOSCatalog::default()), t);
        let leaf = tree("W");
        assert_eq!(oos_simplify(&leaf, &OOSCatalog::default()), leaf);
    }

    #[test]
    fn sub_neg_rewrite_is_opt_in() {
        let t = tree("((W) sub ((G) neg (#)))");
        assert_eq!(oos_simplify(&t, &OOSCatalog::default()), t);
        let mut cat = OOSCatalog::default();
        cat.rewrite_sub_neg = true;
        assert_eq!(oos_simplify(&t, &cat), tree("((W) add (G))"));
    }

    #[test]
    fn rewrites_preserve_values_on_positive_inputs() {
        let st = LayerStats::new(
            "t".to_string(),
            Matrix::from_rows(&[&[0.7, 1.3, 2.1], &[0.5, 3.0, 0.9]]),
            Matrix::from_rows(&[&[1.1, 0.6, 1.9], &[2.5, 0.4, 1.0]]),
            Matrix::from_rows(&[&[0.8, 1.2, 0.3]]),
        )
        .unwrap();
        let cfg = crate::expr::eval::SafeMathConfig::default();
        let cases = [
            "((W) log (#)) exp (#)",
            "((W) exp (#)) log (#)",
            "((G) sqr (#)) sqrt (#)",
            "((G) sqrt (#)) sqr (#)",
            "((W) pow (#)) sqrt (#)",
            "((W) neg (#)) neg (#)",
            "((G) abs (#)) abs (#)",
            "((W) mms (#)) mms (#)",
            "(((W) mul (G)) skp (#)) skp (#)",
        ];
        for s in cases {
            let t = tree(s);
            let u = oos_simplify(&t, &OOSCatalog::default());
            assert!(u.node_count() < t.node_count(), "{} did not shrink", s);
            let a = crate::expr::eval::evaluate(&t, &st, &cfg).unwrap();
            let b = crate::expr::eval::evaluate(&u, &st, &cfg).unwrap();
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                let rel = (x - y).abs() / y.abs().max(1e-12);
                assert!(rel < 1e-5, "{}: {} vs {} (rel {})", s, x, y, rel);
            }
        }
    }

    #[test]
    fn simplify_is_idempotent_and_never_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let cat = OOSCatalog::default();
        for _ in 0..1000 {
            let t = random_tree(&mut rng, 3, 6).unwrap();
            let s1 = oos_simplify(&t, &cat);
            assert!(s1.node_count() <= t.node_count());
            assert_eq!(oos_simplify(&s1, &cat), s1);
            assert_eq!(shape_check(&s1).is_ok(), shape_check(&t).is_ok());
        }
    }

    #[test]
    fn equivalence_respects_catalog_but_not_commutativity() {
        let cat = OOSCatalog::default();
        assert!(is_equivalent(
            &tree("((W) sqrt (#)) sqr (#)"),
            &tree("((W) sqr (#)) sqrt (#)"),
            &cat
        ));
        assert!(is_equivalent(&tree("((W) abs (#)) abs (#)"), &tree("(W) abs (#)"), &cat));
        assert!(!is_equivalent(&tree("((W) mul (G))"), &tree("((G) mul (W))"), &cat));
        assert!(!is_equivalent(&tree("W"), &tree("G"), &cat));
    }

    #[test]
    fn catalog_parse_round_trips_behavior() {
        let text = "
# stock-ish catalog, but without the neg pair
pair exp log   # cancel
pair log exp
idempotent abs
remove skp
";
        let cat = OOSCatalog::parse(text).unwrap();
        assert_eq!(
            oos_simplify(&tree("((W) log (#)) exp (#)"), &cat),
            tree("W")
        );
        // (neg, neg) not listed -> not rewritten.
        let t = tree("((W) neg (#)) neg (#)");
        assert_eq!(oos_simplify(&t, &cat), t);
    }

    #[test]
    fn catalog_parse_errors_carry_line_numbers() {
        let e = OOSCatalog::parse("pair exp log\nsplice skp\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, CatalogErrorKind::UnknownDirective(_)));

        let e = OOSCatalog::parse("pair exp frob\n").unwrap_err();
        assert!(matches!(e.kind, CatalogErrorKind::UnknownOp(_)));

        let e = OOSCatalog::parse("pair exp\n").unwrap_err();
        assert!(matches!(e.kind, CatalogErrorKind::MissingOperand));

        let e = OOSCatalog::parse("remove add\n").unwrap_err();
        assert!(matches!(e.kind, CatalogErrorKind::NotUnary(OpKind::Add)));

        let e = OOSCatalog::parse("idempotent abs abs\n").unwrap_err();
        assert!(matches!(e.kind, CatalogErrorKind::TrailingWords(_)));
    }

    #[test]
    fn effective_probability_is_zero_at_depth_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = OOSCatalog::default()
            .effective_probability(1, 200, &mut rng)
            .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn effective_probability_at_depth_three_is_moderate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = OOSCatalog::default()
            .effective_probability(3, 400, &mut rng)
            .unwrap();
        assert!(p > 0.02 && p < 0.7, "p = {}", p);
    }

    #[test]
    fn canonical_keys_differ_for_distinct_trees() {
        let cat = OOSCatalog::default();
        let keys = [
            CanonicalKey::of(&tree("W"), &cat),
            CanonicalKey::of(&tree("G"), &cat),
            CanonicalKey::of(&tree("(W) abs (#)"), &cat),
            CanonicalKey::of(&tree("((W) mul (G))"), &cat),
        ];
        for i in 0..keys.len() {
            for j in 0..keys.len() {
                assert_eq!(i == j, keys[i] == keys[j]);
            }
        }
    }

    #[test]
    fn op_counts_vector_uses_vocabulary_order() {
        let v = op_counts_vector(&tree("(((W) abs (#)) mul ((G) abs (#)))"));
        assert_eq!(v[OpKind::Abs.index()], 2);
        assert_eq!(v[OpKind::Mul.index()], 1);
        assert_eq!(v.iter().sum::<usize>(), 3);
        assert!(matches!(Leaf::W, Leaf::W)); // leaves never appear in the vector
    }
}
