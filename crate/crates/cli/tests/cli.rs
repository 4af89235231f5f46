//! End-to-end tests that spawn the real `pruner-zero` binary.
//!
//! Covers the exit-code contract (0 success, 1 runtime failure, 2 usage),
//! the happy paths of every subcommand, and the determinism guarantees that
//! only hold across separate process invocations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pruner-zero"));
    // Keep ambient configuration out of the tests.
    cmd.env_remove("PRUNER_ZERO_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pruner-zero")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "exit code mismatch\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Generates a small single-layer gaussian bundle and returns its path.
fn gen_gaussian(dir: &Path, name: &str, cols: &str) -> PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "--seed",
        "7",
        "gen",
        "--kind",
        "gaussian",
        "--layers",
        "1",
        "--rows",
        "8",
        "--cols",
        cols,
        "--samples",
        "8",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    path
}

fn gen_mlp(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    let out = run(&[
        "--seed",
        "11",
        "gen",
        "--kind",
        "mlp",
        "--din",
        "6",
        "--hidden",
        "8",
        "--dout",
        "3",
        "--samples",
        "8",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    path
}

#[test]
fn no_subcommand_is_usage_error() {
    let out = run(&[]);
    assert_code(&out, 2);
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["builtin", "--bogus"]);
    assert_code(&out, 2);
}

#[test]
fn builtin_lists_all_metrics() {
    let out = run(&["builtin"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("magnitude: "));
    assert!(text.contains("wanda: "));
    assert!(text.contains("prunerzero: "));
}

#[test]
fn builtin_by_name_prints_one_line() {
    let out = run(&["builtin", "--name", "wanda"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("wanda: "));
}

#[test]
fn builtin_unknown_name_is_usage_error() {
    let out = run(&["builtin", "--name", "nope"]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("unknown builtin"));
}

#[test]
fn gen_eval_prune_happy_path() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_gaussian(dir.path(), "b.pzb", "8");

    let out = run(&[
        "eval",
        "--bundle",
        bundle.to_str().unwrap(),
        "--builtin",
        "magnitude",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("layer0: rows=8 cols=8"), "got: {text}");
    assert!(text.contains("finite=true"));

    let out = run(&[
        "prune",
        "--bundle",
        bundle.to_str().unwrap(),
        "--builtin",
        "magnitude",
        "--sparsity",
        "0.5",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("layer0: kept=32/64 recon="), "got: {text}");
    assert!(text.contains("total: recon="));
}

#[test]
fn gen_cross_kind_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("x.pzb");
    let out = run(&[
        "gen",
        "--kind",
        "gaussian",
        "--din",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("--din only applies to --kind mlp"));

    let out = run(&[
        "gen",
        "--kind",
        "mlp",
        "--rows",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("--rows only applies to --kind gaussian"));
}

#[test]
fn gen_bad_anisotropy_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("x.pzb");
    let out = run(&[
        "gen",
        "--kind",
        "gaussian",
        "--anisotropy",
        "1,abc",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 2);

    // Wrong length for the column count is also caught before writing.
    let out = run(&[
        "gen",
        "--kind",
        "gaussian",
        "--cols",
        "4",
        "--anisotropy",
        "1,2,3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(!path.exists());
}

#[test]
fn conflicting_pattern_flags_are_usage_errors() {
    let out = run(&[
        "prune",
        "--bundle",
        "whatever.pzb",
        "--builtin",
        "magnitude",
        "--sparsity",
        "0.5",
        "--nm",
        "2:4",
    ]);
    assert_code(&out, 2);
}

#[test]
fn bad_expression_is_usage_error() {
    // The expression is validated before the bundle is opened, so no bundle
    // file is needed to observe exit 2.
    let out = run(&["eval", "--bundle", "missing.pzb", "--expr", "((W"]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("bad expression"));
}

#[test]
fn row_vector_expression_is_usage_error() {
    let out = run(&["eval", "--bundle", "missing.pzb", "--expr", "(X) norm2 (#)"]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("not matrix-shaped"));
}

#[test]
fn missing_bundle_is_runtime_error() {
    let out = run(&[
        "eval",
        "--bundle",
        "/nonexistent/missing.pzb",
        "--builtin",
        "magnitude",
    ]);
    assert_code(&out, 1);
}

#[test]
fn corrupt_bundle_is_runtime_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("garbage.pzb");
    fs::write(&path, b"PZB1this is not a bundle").unwrap();
    let out = run(&[
        "eval",
        "--bundle",
        path.to_str().unwrap(),
        "--builtin",
        "magnitude",
    ]);
    assert_code(&out, 1);
}

#[test]
fn bad_threads_env_is_usage_error() {
    // Thread resolution happens before the bundle is opened.
    let out = bin()
        .env("PRUNER_ZERO_THREADS", "abc")
        .args([
            "prune",
            "--bundle",
            "missing.pzb",
            "--builtin",
            "magnitude",
            "--sparsity",
            "0.5",
        ])
        .output()
        .unwrap();
    assert_code(&out, 2);
    assert!(stderr(&out).contains("PRUNER_ZERO_THREADS"));
}

#[test]
fn nm_prune_writes_mask_file() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_gaussian(dir.path(), "b.pzb", "8");
    let masks = dir.path().join("masks.pzm");
    let out = run(&[
        "prune",
        "--bundle",
        bundle.to_str().unwrap(),
        "--builtin",
        "wanda",
        "--nm",
        "2:4",
        "--out",
        masks.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("layer0: kept=32/64"));
    let bytes = fs::read(&masks).unwrap();
    assert_eq!(&bytes[..4], b"PZM1");
}

#[test]
fn nm_prune_with_indivisible_cols_is_runtime_error() {
    let dir = TempDir::new().unwrap();
    // 6 columns cannot be tiled by groups of 4; this is a property of the
    // bundle file, not the command line, so it exits 1.
    let bundle = gen_gaussian(dir.path(), "b6.pzb", "6");
    let out = run(&[
        "prune",
        "--bundle",
        bundle.to_str().unwrap(),
        "--builtin",
        "magnitude",
        "--nm",
        "2:4",
    ]);
    assert_code(&out, 1);
}

#[test]
fn cross_mode_fitness_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let out = run(&[
        "evolve",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "recon",
        "--sparsity",
        "0.5",
        "--target-builtin",
        "wanda",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("only apply to --fitness target"));

    let out = run(&[
        "evolve",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "wanda",
        "--sparsity",
        "0.5",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("only apply to --fitness recon"));
}

#[test]
fn simplify_prints_reduced_form_and_key() {
    let out = run(&["simplify", "--expr", "(((W) sqr (#)) sqrt (#)) skp (#)"]);
    assert_code(&out, 0);
    assert_eq!(stdout(&out), "W\n");

    let out = run(&[
        "simplify",
        "--expr",
        "((G) mul (W))",
        "--show-key",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("((G) mul (W))"));
    let key_line = lines.next().unwrap();
    let hex = key_line.strip_prefix("key: ").unwrap();
    assert_eq!(hex.len(), 32);
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn simplify_honors_custom_catalog() {
    let dir = TempDir::new().unwrap();
    let catalog = dir.path().join("rules.txt");
    // A catalog with no rules leaves every tree alone.
    fs::write(&catalog, "# intentionally empty\n").unwrap();
    let expr = "((W) neg (#)) neg (#)";
    let out = run(&[
        "simplify",
        "--expr",
        expr,
        "--catalog",
        catalog.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert_eq!(stdout(&out).trim_end(), expr);

    // A bad catalog line is a file problem: exit 1.
    fs::write(&catalog, "pair exp log\nfrobnicate abs\n").unwrap();
    let out = run(&[
        "simplify",
        "--expr",
        expr,
        "--catalog",
        catalog.to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}

#[test]
fn evolve_writes_records_and_summary() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let out = run(&[
        "--seed",
        "3",
        "evolve",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "wanda",
        "--pop",
        "8",
        "--topk",
        "4",
        "--iters",
        "5",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("best: "), "got: {text}");
    assert!(text.contains("fitness: "));

    let content = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = content.lines().collect();
    assert_eq!(lines.len(), 6, "5 records + 1 summary");
    for (i, line) in lines.iter().take(5).enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["iter"].as_u64(), Some(i as u64 + 1));
        assert_eq!(v["pop_size"].as_u64(), Some(8));
        // Without --timing the log is deterministic: no wall-clock leakage.
        assert_eq!(v["elapsed_ms"].as_u64(), Some(0));
        assert!(v["best_expr"].is_string());
    }
    let summary: serde_json::Value = serde_json::from_str(lines[5]).unwrap();
    assert_eq!(summary["summary"].as_bool(), Some(true));
    assert_eq!(summary["iterations"].as_u64(), Some(5));
    assert_eq!(summary["wall_ms"].as_u64(), Some(0));
}

#[test]
fn evolve_zero_iters_writes_summary_only() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let out = run(&[
        "evolve",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "magnitude",
        "--pop",
        "6",
        "--topk",
        "3",
        "--iters",
        "0",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let content = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = content.lines().collect();
    assert_eq!(lines.len(), 1, "summary only");
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["summary"].as_bool(), Some(true));
    // The initial population is still scored, so a best exists.
    assert!(v["best_expr"].is_string());
}

#[test]
fn random_zero_iters_writes_empty_log() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let out = run(&[
        "random",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "magnitude",
        "--iters",
        "0",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("no iterations run"));
    assert_eq!(fs::read(&log).unwrap().len(), 0);
}

#[test]
fn random_search_logs_parse() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let out = run(&[
        "--seed",
        "5",
        "random",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "wanda",
        "--iters",
        "10",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let content = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = content.lines().collect();
    assert_eq!(lines.len(), 11, "10 records + 1 summary");
    for line in &lines[..10] {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        // Random search has no population.
        assert_eq!(v["pop_size"].as_u64(), Some(0));
    }
}

#[test]
fn external_fitness_scores_from_command() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let script = dir.path().join("score.sh");
    fs::write(&script, "#!/bin/sh\necho 1.5\n").unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    }
    let template = format!("{} {{expr}}", script.to_str().unwrap());
    let out = run(&[
        "random",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "external",
        "--command",
        &template,
        "--iters",
        "3",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("fitness: 1.5"), "got: {}", stdout(&out));

    // A template without the placeholder is a usage error.
    let out = run(&[
        "random",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "external",
        "--command",
        "/bin/echo 0.5",
        "--iters",
        "1",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("{expr}"));
}

#[test]
fn analyze_produces_correlation_csv() {
    let dir = TempDir::new().unwrap();
    let bundle = gen_mlp(dir.path(), "m.pzb");
    let log = dir.path().join("log.jsonl");
    let out = run(&[
        "--seed",
        "9",
        "random",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "wanda",
        "--iters",
        "40",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let csv = dir.path().join("corr.csv");
    let out = run(&[
        "analyze",
        "--log",
        log.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let content = fs::read_to_string(&csv).unwrap();
    let mut lines = content.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("op,"), "got header: {header}");
    assert!(header.ends_with(",fitness"));
    // 18 data rows: 17 operators + fitness.
    assert_eq!(lines.count(), 18);

    // Analyzing a log with too few candidates is a runtime error.
    let tiny_log = dir.path().join("tiny.jsonl");
    let out = run(&[
        "random",
        "--bundle",
        bundle.to_str().unwrap(),
        "--fitness",
        "target",
        "--target-builtin",
        "wanda",
        "--iters",
        "1",
        "--log",
        tiny_log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let out = run(&[
        "analyze",
        "--log",
        tiny_log.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}

#[test]
fn gen_is_deterministic_across_processes() {
    let dir = TempDir::new().unwrap();
    let a = gen_gaussian(dir.path(), "a.pzb", "8");
    let b = gen_gaussian(dir.path(), "b.pzb", "8");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn quiet_suppresses_informational_output() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("q.pzb");
    let out = run(&[
        "--quiet",
        "gen",
        "--kind",
        "gaussian",
        "--layers",
        "1",
        "--rows",
        "4",
        "--cols",
        "4",
        "--samples",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout(&out).is_empty());
    assert!(path.exists());
}
