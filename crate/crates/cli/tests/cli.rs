use std::path::Path;
use std::process::{Command, Output};

fn aoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn modes_lists_the_registry() {
    let o = aoi(&["modes"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    for m in ["dqn", "qmix_global", "qmix_partial", "uniform", "vdn"] {
        assert!(names.iter().any(|n| n == m), "{m} missing from {names:?}");
    }
}

#[test]
fn quick_selftest_passes() {
    let o = aoi(&["selftest", "--quick"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["run", "--devices", "3", "--resource-blocks", "1", "--slots", "300", "--eval-slots", "100"];
    args.extend_from_slice(&["--out", out]);
    args.extend_from_slice(extra);
    aoi(&args)
}

#[test]
fn run_writes_artifacts_and_a_reusable_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &["--mode", "dqn", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["mode"], "dqn");
    assert_eq!(summary["devices"], 3);
    for f in ["ledger.csv", "loss.csv", "summary.json", "config.toml", "checkpoint/manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    // the saved config alone reproduces the run
    let again = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    let o2 = aoi(&["run", "--config", cfg.to_str().unwrap(), "--out", again.path().to_str().unwrap(), "--seed", "3"]);
    assert!(o2.status.success(), "{}", String::from_utf8_lossy(&o2.stderr));
    let read = |d: &Path| std::fs::read(d.join("ledger.csv")).unwrap();
    assert_eq!(read(dir.path()), read(again.path()));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_run(dir.path(), &["--mode", "oracle"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown mode"));
}

#[test]
fn fit_recovers_a_scalar_decay() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let mut text = String::from("t,x\n");
    let mut x = 1.0f64;
    for t in 0..40 {
        text.push_str(&format!("{t},{x}\n"));
        x *= 0.9;
    }
    std::fs::write(&csv, text).unwrap();
    let o = aoi(&["fit", "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(fit["kind"], "linear");
    let a = fit["dynamics"]["a"][0][0].as_f64().unwrap();
    assert!((a - 0.9).abs() < 1e-9, "fitted {a}");
}
