//! Search logs: one JSON object per line, then one summary object.
//!
//! Lines are written by hand with a fixed field order so identical runs
//! produce identical bytes; serde_json is only used for string escaping
//! on the way out and full parsing on the way back in. A `+inf` fitness
//! (the unscorable sentinel) is encoded as `null`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pruner_zero_core::evolve::{SearchLogRecord, SearchSummary};

/// JSON encoding for fitness values: finite numbers as-is, sentinel as null.
fn fitness_json(v: f64) -> String {
    if v.is_finite() {
        format!("{}", v)
    } else {
        "null".to_string()
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

pub fn record_line(r: &SearchLogRecord) -> String {
    format!(
        "{{\"iter\":{},\"offspring_expr\":{},\"offspring_fitness\":{},\"best_expr\":{},\"best_fitness\":{},\"pop_size\":{},\"cache_hits\":{},\"elapsed_ms\":{}}}",
        r.iter,
        json_str(&r.offspring_expr),
        fitness_json(r.offspring_fitness),
        json_str(&r.best_expr),
        fitness_json(r.best_fitness),
        r.pop_size,
        r.cache_hits,
        r.elapsed_ms
    )
}

pub fn summary_line(s: &SearchSummary, iterations: u64, pop_size: usize) -> String {
    let best_expr = match &s.best_expr {
        Some(e) => json_str(e),
        None => "null".to_string(),
    };
    let best_fitness = match s.best_fitness {
        Some(v) => fitness_json(v),
        None => "null".to_string(),
    };
    format!(
        "{{\"summary\":true,\"best_expr\":{},\"best_fitness\":{},\"iterations\":{},\"pop_size\":{},\"cache_hits\":{},\"uniqueness_waivers\":{},\"wall_ms\":{}}}",
        best_expr, best_fitness, iterations, pop_size, s.total_cache_hits, s.uniqueness_waivers, s.wall_ms
    )
}

/// Writes records then (optionally) the summary, LF line endings.
pub fn write_log(
    path: &Path,
    records: &[SearchLogRecord],
    summary: Option<(&SearchSummary, u64, usize)>,
) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating log file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for r in records {
        w.write_all(record_line(r).as_bytes())?;
        w.write_all(b"\n")?;
    }
    if let Some((s, iterations, pop_size)) = summary {
        w.write_all(summary_line(s, iterations, pop_size).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush().context("flushing log file")?;
    Ok(())
}

/// Reads `(offspring_expr, offspring_fitness)` pairs back out of a log,
/// skipping summary lines; `null` fitness comes back as `+inf`.
pub fn read_log_candidates(path: &Path) -> Result<Vec<(String, f64)>> {
    let file =
        File::open(path).with_context(|| format!("opening log file {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading log line {}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("log line {} is not valid JSON", i + 1))?;
        let obj = match v.as_object() {
            Some(o) => o,
            None => bail!("log line {} is not a JSON object", i + 1),
        };
        if obj.contains_key("summary") {
            continue;
        }
        let expr = obj
            .get("offspring_expr")
            .and_then(|e| e.as_str())
            .with_context(|| format!("log line {} has no offspring_expr", i + 1))?;
        let fitness = match obj.get("offspring_fitness") {
            Some(serde_json::Value::Null) => f64::INFINITY,
            Some(f) => f
                .as_f64()
                .with_context(|| format!("log line {} has a non-numeric fitness", i + 1))?,
            None => bail!("log line {} has no offspring_fitness", i + 1),
        };
        out.push((expr.to_string(), fitness));
    }
    Ok(out)
}
