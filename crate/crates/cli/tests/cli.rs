//! Subcommand-level behavior: exit codes, flag validation, file handoffs.

use std::path::Path;
use std::process::{Command, Output};

fn lrc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn lrc")
}

fn assert_code(out: &Output, want: i32, ctx: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{ctx}: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// gen-data + train once per test binary run.
fn setup(dir: &Path) {
    let out = lrc(
        &["gen-data", "--out", "d.toyd", "--n", "64", "--classes", "2", "--hw", "16", "--seed", "5"],
        dir,
    );
    assert_code(&out, 0, "gen-data");
    let out = lrc(
        &["train", "--data", "d.toyd", "--out", "model", "--epochs", "2", "--width", "4", "--seed", "5"],
        dir,
    );
    assert_code(&out, 0, "train");
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&lrc(&["--help"], dir.path()), 0, "--help");
    assert_code(&lrc(&["--version"], dir.path()), 0, "--version");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrc(&["gen-data", "--out", "x.toyd", "--bogus"], dir.path());
    assert_code(&out, 1, "unknown flag");
}

#[test]
fn zero_threads_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrc(
        &["--threads", "0", "gen-data", "--out", "x.toyd"],
        dir.path(),
    );
    assert_code(&out, 1, "--threads 0");
}

#[test]
fn missing_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrc(
        &["train", "--data", "absent.toyd", "--out", "m"],
        dir.path(),
    );
    assert_code(&out, 1, "missing dataset");
}

#[test]
fn bad_dataset_args_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = lrc(
        &["gen-data", "--out", "x.toyd", "--hw", "17"],
        dir.path(),
    );
    assert_code(&out, 1, "bad hw");
    let out = lrc(
        &["gen-data", "--out", "x.toyd", "--classes", "1"],
        dir.path(),
    );
    assert_code(&out, 1, "bad classes");
}

#[test]
fn plan_with_unit_target_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = lrc(
        &["spectra", "--model", "model", "--data", "d.toyd", "--out", "s.json",
          "--images", "32", "--positions", "2", "--seed", "5"],
        dir.path(),
    );
    assert_code(&out, 0, "spectra");
    let out = lrc(
        &["plan", "--spectra", "s.json", "--model", "model",
          "--target-speedup", "1.0", "--no-restore-term", "--out", "p.json", "--seed", "5"],
        dir.path(),
    );
    assert_code(&out, 0, "plan at 1.0x");
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap())
            .unwrap();
    // Identity plan: every conv keeps full rank (toy width 4 -> d = 4, 4, 8).
    let ranks = plan["ranks"].as_object().unwrap();
    assert_eq!(ranks["0"], 4);
    assert_eq!(ranks["2"], 4);
    assert_eq!(ranks["5"], 8);
    assert_eq!(plan["predicted_speedup"], 1.0);
}

#[test]
fn compress_full_ranks_then_eval_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = lrc(
        &["compress", "--model", "model", "--data", "d.toyd", "--ranks", "full",
          "--mode", "asymmetric", "--iters", "4", "--images", "24", "--positions", "2",
          "--out", "full_model", "--seed", "5"],
        dir.path(),
    );
    assert_code(&out, 0, "compress full");
    let out = lrc(
        &["eval", "--orig", "model", "--compressed", "full_model", "--data", "d.toyd",
          "--images", "24", "--positions", "2", "--out", "r.json", "--seed", "9"],
        dir.path(),
    );
    assert_code(&out, 0, "eval");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap())
            .unwrap();
    assert_eq!(report["top1_before"], report["top1_after"]);
}

#[test]
fn compress_needs_exactly_one_rank_source() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = lrc(
        &["compress", "--model", "model", "--data", "d.toyd", "--out", "x"],
        dir.path(),
    );
    assert_code(&out, 1, "no rank source");
    let out = lrc(
        &["compress", "--model", "model", "--data", "d.toyd", "--ranks", "full",
          "--target-speedup", "2.0", "--out", "x"],
        dir.path(),
    );
    assert_code(&out, 1, "two rank sources");
}

#[test]
fn singular_covariance_with_zero_ridge_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    // Conv1 has d = 4 > k^2 c + 1 = 10? With width 4 the first conv is
    // 4 filters over a 10-dim patch space, so its covariance is healthy;
    // use a width where d exceeds the patch dimension instead.
    let out = lrc(
        &["train", "--data", "d.toyd", "--out", "wide", "--epochs", "1", "--width", "16", "--seed", "6"],
        dir.path(),
    );
    assert_code(&out, 0, "train wide");
    // First conv: d = 16 responses spanning a <= 10-dim patch space, so the
    // centered covariance is rank deficient and a zero ridge must fail.
    let out = lrc(
        &["compress", "--model", "wide", "--data", "d.toyd", "--ranks", "0=8",
          "--mode", "nonlinear", "--ridge", "0.0", "--iters", "2",
          "--images", "24", "--positions", "2", "--out", "x", "--seed", "6"],
        dir.path(),
    );
    assert_code(&out, 2, "singular with zero ridge");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("singular"), "stderr: {stderr}");
    // The same compression succeeds with the automatic ridge.
    let out = lrc(
        &["compress", "--model", "wide", "--data", "d.toyd", "--ranks", "0=8",
          "--mode", "nonlinear", "--iters", "2",
          "--images", "24", "--positions", "2", "--out", "x", "--seed", "6"],
        dir.path(),
    );
    assert_code(&out, 0, "auto ridge");
}

#[test]
fn bench_smoke() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = lrc(
        &["bench", "--model", "model", "--data", "d.toyd", "--reps", "3"],
        dir.path(),
    );
    assert_code(&out, 0, "bench");
    assert!(String::from_utf8_lossy(&out.stdout).contains("median"));
    let out = lrc(
        &["bench", "--model", "model", "--data", "d.toyd", "--reps", "2"],
        dir.path(),
    );
    assert_code(&out, 1, "too few reps");
}
