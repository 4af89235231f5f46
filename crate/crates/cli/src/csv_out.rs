//! Correlation-matrix CSV output.
//!
//! Header row is `op,<label...>`; each following row is a label plus its
//! correlations. Undefined cells (constant columns) are written as `nan`.
//! LF line endings, no trailing comma, no quoting needed (labels are
//! operator tokens).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use pruner_zero_core::analysis::CorrelationMatrix;

fn cell(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{}", v)
    }
}

pub fn write_correlation_csv(path: &Path, m: &CorrelationMatrix) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating csv file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("op");
    for label in &m.labels {
        header.push(',');
        header.push_str(label);
    }
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for i in 0..m.size() {
        let mut row = m.labels[i].clone();
        for j in 0..m.size() {
            row.push(',');
            row.push_str(&cell(m.get(i, j)));
        }
        w.write_all(row.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush().context("flushing csv file")?;
    Ok(())
}
