use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deproj_core::eval::EvalCurve;

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.cfg")
}

fn deproj(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deproj"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = deproj(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    ok(&["synth", "--config", cfg], dir.path());
    let log = ok(&["train", "--config", cfg], dir.path());
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 2);
    ok(&["eval", "--config", cfg], dir.path());
    for f in ["dataset.dpjk", "model_cvae.dpjk", "history_cvae.csv", "eval_cvae.csv", "montage_cvae.pgm"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("eval_cvae.csv")).unwrap();
    let rows = EvalCurve::parse_csv(&csv).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), [1, 2, 5]);
    assert!(rows.windows(2).all(|w| w[1].best_signal_psnr >= w[0].best_signal_psnr));
    let pgm = std::fs::read(dir.path().join("montage_cvae.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}

#[test]
fn baselines_montage_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    ok(&["synth", "--config", cfg], dir.path());
    ok(&["baseline-lmmse", "--config", cfg], dir.path());
    ok(&["baseline-knn", "--config", cfg, "--k-list", "1,3"], dir.path());
    ok(&["montage", "--config", cfg], dir.path());
    ok(&["sample", "--config", cfg, "--method", "knn", "--k-list", "2"], dir.path());
    for f in [
        "lmmse.dpjk",
        "eval_lmmse.csv",
        "eval_knn.csv",
        "montage_data.pgm",
        "samples_knn.pgm",
        "samples_knn.dpjk",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let knn = EvalCurve::parse_csv(&std::fs::read_to_string(dir.path().join("eval_knn.csv")).unwrap()).unwrap();
    assert_eq!(knn.len(), 2);
}

#[test]
fn det_curve_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    ok(&["synth", "--config", cfg], dir.path());
    ok(&["train", "--config", cfg, "--set", "model.variant=det"], dir.path());
    ok(&["eval", "--config", cfg, "--method", "det", "--k-list", "1,3,7"], dir.path());
    let rows = EvalCurve::parse_csv(&std::fs::read_to_string(dir.path().join("eval_det.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.best_signal_psnr == rows[0].best_signal_psnr));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = deproj(&["train", "--config", "/nonexistent/toy.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error: usage: "), "{err}");
    assert!(err.contains("Usage:"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(deproj(&["train"], dir.path()).status.code(), Some(2));
    assert_eq!(deproj(&["frobnicate", "--config", cfg], dir.path()).status.code(), Some(2));
    let o = deproj(&["eval", "--config", cfg, "--method", "oracle"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = deproj(&["eval", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(2), "dataset is missing");
}

#[test]
fn runtime_errors_exit_one_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "bogus.key=1\n").unwrap();
    let o = deproj(&["synth", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: config: config line 1: key `bogus.key`"), "{err}");

    let garbage = dir.path().join("dataset.dpjk");
    std::fs::write(&garbage, b"not a container").unwrap();
    let toy = toy_config();
    let o = deproj(&["train", "--config", toy.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: format: "));
}

#[test]
fn writes_only_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/out");
    let cfg = toy_config();
    ok(&["synth", "--config", cfg.to_str().unwrap()], &out);
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
    assert!(out.join("dataset.dpjk").is_file());
}
