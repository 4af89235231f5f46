//! Post-search analysis: which operators correlate with good fitness?
//!
//! Candidates harvested from a search log are reduced to per-expression
//! operator counts; this module builds the (ops + fitness) correlation
//! matrix the CSV report is rendered from. The rank and correlation
//! helpers also back the target-recovery fitness mode.

use alloc::string::String;
use alloc::vec::Vec;

use crate::expr::{parse_expr, OpKind, ParseError};
use crate::simplify::{op_counts_vector, CanonicalKey, OOSCatalog};

/// Average ranks (1-based) with ties sharing their mean rank, e.g.
/// `[3, 1, 4, 1, 5] -> [3, 1.5, 4, 1.5, 5]`.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` if either input is constant (the
/// coefficient is undefined, not zero).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 0 {
        return None;
    }
    let constant = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
    if constant(xs) || constant(ys) {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        let dx = x - mx;
        let dy = y - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / crate::math::sqrt64(vx * vy))
}

/// Spearman rank correlation with average-rank ties. Identical rank
/// vectors short-circuit to exactly `1.0`.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    if rx == ry {
        return Some(1.0);
    }
    pearson(&rx, &ry)
}

/// Spearman over f32 slices (saliency matrices flatten to these).
pub fn spearman_f32(xs: &[f32], ys: &[f32]) -> Option<f64> {
    let xd: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
    let yd: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
    spearman(&xd, &yd)
}

/// One analyzed candidate: expression, fitness, operator usage.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateRecord {
    pub expr: String,
    pub fitness: f64,
    pub op_counts: [usize; OpKind::ALL.len()],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectError {
    /// Zero-based index of the offending entry.
    pub entry: usize,
    pub err: ParseError,
}

impl core::fmt::Display for CollectError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "entry {}: {}", self.entry, self.err)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CollectError {}

/// Filters `(expr, fitness)` pairs to finite fitness strictly below
/// `threshold`, parses each expression, and deduplicates by canonical key,
/// keeping the best (lowest) fitness per key. Output preserves first-seen
/// order of the surviving keys.
pub fn collect_candidates<I>(
    entries: I,
    threshold: f64,
    catalog: &OOSCatalog,
) -> Result<Vec<CandidateRecord>, CollectError>
where
    I: IntoIterator<Item = (String, f64)>,
{
    let mut out: Vec<(CanonicalKey, CandidateRecord)> = Vec::new();
    for (i, (expr, fitness)) in entries.into_iter().enumerate() {
        if !fitness.is_finite() || fitness >= threshold {
            continue;
        }
        let tree = parse_expr(&expr).map_err(|err| CollectError { entry: i, err })?;
        let key = CanonicalKey::of(&tree, catalog);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rec)) => {
                if fitness < rec.fitness {
                    rec.expr = expr;
                    rec.fitness = fitness;
                    rec.op_counts = op_counts_vector(&tree);
                }
            }
            None => out.push((
                key,
                CandidateRecord {
                    op_counts: op_counts_vector(&tree),
                    expr,
                    fitness,
                },
            )),
        }
    }
    Ok(out.into_iter().map(|(_, rec)| rec).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

/// Square correlation matrix over the 17 operator-count columns plus a
/// final `fitness` column. Undefined cells (constant columns) hold NaN;
/// the diagonal is exactly 1 regardless.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.labels.len() + j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnalysisError {
    /// Correlations over fewer than three records are noise.
    TooFewRecords(usize),
}

impl core::fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AnalysisError::TooFewRecords(n) => {
                write!(f, "need at least 3 candidate records, got {}", n)
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AnalysisError {}

pub fn correlation_matrix(
    records: &[CandidateRecord],
    method: CorrMethod,
) -> Result<CorrelationMatrix, AnalysisError> {
    if records.len() < 3 {
        return Err(AnalysisError::TooFewRecords(records.len()));
    }
    let n_ops = OpKind::ALL.len();
    let size = n_ops + 1;
    let mut labels: Vec<String> = OpKind::ALL.iter().map(|op| String::from(op.token())).collect();
    labels.push(String::from("fitness"));

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(size);
    for op_i in 0..n_ops {
        columns.push(records.iter().map(|r| r.op_counts[op_i] as f64).collect());
    }
    columns.push(records.iter().map(|r| r.fitness).collect());

    let mut values = alloc::vec![f64::NAN; size * size];
    for i in 0..size {
        for j in i..size {
            let v = if i == j {
                1.0
            } else {
                let c = match method {
                    CorrMethod::Pearson => pearson(&columns[i], &columns[j]),
                    CorrMethod::Spearman => spearman(&columns[i], &columns[j]),
                };
                c.unwrap_or(f64::NAN)
            };
            values[i * size + j] = v;
            values[j * size + i] = v;
        }
    }
    Ok(CorrelationMatrix { labels, values })
}

/// The `k` operators most correlated (by absolute value) with fitness.
/// NaN cells are excluded; ties break alphabetically for determinism.
pub fn top_fitness_correlations(m: &CorrelationMatrix, k: usize) -> Vec<(String, f64)> {
    let fit = m.size() - 1;
    let mut rows: Vec<(String, f64)> = (0..fit)
        .filter_map(|i| {
            let v = m.get(i, fit);
            if v.is_nan() {
                None
            } else {
                Some((m.labels[i].clone(), v))
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        crate::math::abs64(b.1)
            .total_cmp(&crate::math::abs64(a.1))
            .then_with(|| a.0.cmp(&b.0))
    });
    rows.truncate(k);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn average_ranks_handles_ties() {
        let r = average_ranks(&[3.0, 1.0, 4.0, 1.0, 5.0]);
        assert_eq!(r, vec![3.0, 1.5, 4.0, 1.5, 5.0]);
        let all_tied = average_ranks(&[2.0, 2.0, 2.0]);
        assert_eq!(all_tied, vec![2.0, 2.0, 2.0]);
        let empty: Vec<f64> = vec![];
        assert!(average_ranks(&empty).is_empty());
    }

    #[test]
    fn pearson_known_values() {
        // Perfect line: r = 1; anti-line: r = -1.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let yn: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &yn).unwrap() + 1.0).abs() < 1e-12);
        // Independently derived by hand: x=[1,2,3], y=[1,3,2] -> r = 0.5.
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn spearman_monotone_and_reversed() {
        // Any monotone transform of x has Spearman 1 with x.
        let x = [0.1, 0.7, 0.3, 0.9];
        let y: Vec<f64> = x.iter().map(|v| v * v * 100.0).collect();
        assert_eq!(spearman(&x, &y), Some(1.0));
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);

        // Hand case with a tie: x = [1,2,2,4] vs y = [1,3,2,4].
        // ranks x = [1, 2.5, 2.5, 4], y = [1, 3, 2, 4]; r ~ 0.9487.
        let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-9, "rho {}", rho);
    }

    #[test]
    fn collect_filters_dedups_and_keeps_best() {
        let cat = OOSCatalog::default();
        let entries = vec![
            ("(W) abs (#)".to_string(), 0.9),
            ("((W) abs (#)) abs (#)".to_string(), 0.4), // same canonical key, better
            ("((G) mul (W))".to_string(), f64::INFINITY), // sentinel: dropped
            ("((W) mul (G))".to_string(), 1.5),           // above threshold: dropped
            ("(G) sqr (#)".to_string(), 0.7),
        ];
        let recs = collect_candidates(entries, 1.0, &cat).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].expr, "((W) abs (#)) abs (#)");
        assert_eq!(recs[0].fitness, 0.4);
        assert_eq!(recs[1].expr, "(G) sqr (#)");
        // abs appears twice in the kept duplicate's own tree.
        assert_eq!(recs[0].op_counts[OpKind::Abs.index()], 2);
    }

    #[test]
    fn collect_propagates_parse_errors_with_entry_index() {
        let cat = OOSCatalog::default();
        let entries = vec![
            ("(W) abs (#)".to_string(), 0.2),
            ("(W) frob (#)".to_string(), 0.2),
        ];
        let err = collect_candidates(entries, 1.0, &cat).unwrap_err();
        assert_eq!(err.entry, 1);
    }

    fn engineered_records() -> Vec<CandidateRecord> {
        // mul counts [0, 0, 4, 4] against fitness [3.5, 0.5, 7.5, 4.5]:
        // all dyadic rationals, Pearson exactly 0.8 in f64 (independently
        // derived: cov = 16, var_x = 16, var_y = 25, 16/sqrt(400) = 0.8).
        let muls = [0usize, 0, 4, 4];
        let fits = [3.5, 0.5, 7.5, 4.5];
        muls.iter()
            .zip(fits.iter())
            .map(|(&m, &f)| {
                let mut op_counts = [0usize; 17];
                op_counts[OpKind::Mul.index()] = m;
                CandidateRecord {
                    expr: String::from("synthetic"),
                    fitness: f,
                    op_counts,
                }
            })
            .collect()
    }

    #[test]
    fn correlation_matrix_exact_engineered_value() {
        let recs = engineered_records();
        let m = correlation_matrix(&recs, CorrMethod::Pearson).unwrap();
        assert_eq!(m.size(), 18);
        assert_eq!(m.labels[OpKind::Mul.index()], "mul");
        assert_eq!(m.labels[17], "fitness");
        let r = m.get(OpKind::Mul.index(), 17);
        assert_eq!(r, 0.8, "engineered Pearson should be exact, got {}", r);
        // Symmetry.
        assert_eq!(m.get(17, OpKind::Mul.index()), 0.8);
    }

    #[test]
    fn constant_columns_are_nan_but_diagonal_is_one() {
        let recs = engineered_records();
        let m = correlation_matrix(&recs, CorrMethod::Pearson).unwrap();
        // No record uses `add`: its column is constant zero.
        let add = OpKind::Add.index();
        assert!(m.get(add, 17).is_nan());
        assert_eq!(m.get(add, add), 1.0);
        for i in 0..m.size() {
            assert_eq!(m.get(i, i), 1.0);
        }
    }

    #[test]
    fn too_few_records_is_an_error() {
        let recs: Vec<CandidateRecord> = engineered_records().into_iter().take(2).collect();
        let err = correlation_matrix(&recs, CorrMethod::Pearson).unwrap_err();
        assert_eq!(err, AnalysisError::TooFewRecords(2));
    }

    #[test]
    fn spearman_matrix_on_engineered_data() {
        let recs = engineered_records();
        let m = correlation_matrix(&recs, CorrMethod::Spearman).unwrap();
        // mul ranks [1.5, 1.5, 3.5, 3.5], fitness ranks [2, 1, 4, 3];
        // hand Pearson of those ranks: cov=4, vx=4, vy=5 -> 4/sqrt(20).
        let expected = 4.0 / 20.0f64.sqrt();
        let got = m.get(OpKind::Mul.index(), 17);
        assert!((got - expected).abs() < 1e-12, "{} vs {}", got, expected);
    }

    #[test]
    fn top_correlations_sorted_by_magnitude() {
        let recs = engineered_records();
        let m = correlation_matrix(&recs, CorrMethod::Pearson).unwrap();
        let top = top_fitness_correlations(&m, 3);
        assert_eq!(top.len(), 1, "only mul has a defined correlation");
        assert_eq!(top[0].0, "mul");
        assert_eq!(top[0].1, 0.8);
    }
}
