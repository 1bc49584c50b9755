use std::path::Path;
use std::process::{Command, Output};

fn groupreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_prune_continue_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train");
    let res = groupreg(&["train", "--preset", "toy", "--epochs", "30", "--reg", "pgl", "--zero-ratio", "1/4", "--seed", "3", "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["checkpoint.json", "config.toml", "report.txt", "report.csv", "report.json", "runs.json", "ratio_series.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let config = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(config.contains("zero_ratio = \"1/4\""));
    assert!(config.contains("kind = \"partial_gl\""));

    let pruned = dir.path().join("pruned");
    let res = groupreg(&["prune", "--checkpoint", path(&out.join("checkpoint.json")), "--threshold", "1e-3", "--out", path(&pruned)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(pruned.join("pruned.json").exists() && pruned.join("prune_report.json").exists());

    let cont = dir.path().join("cont");
    let res = groupreg(&["continue", "--checkpoint", path(&pruned.join("pruned.json")), "--epochs", "5", "--baseline", "--out", path(&cont)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("toy-reinit"));

    let rendered = dir.path().join("rendered");
    let res = groupreg(&["report", "--runs", path(&out.join("runs.json")), "--format", "csv", "--format", "plot-data", "--out", path(&rendered)]);
    assert!(res.status.success());
    assert!(rendered.join("report.csv").exists() && rendered.join("ratio_series.csv").exists());
}

#[test]
fn config_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert!(groupreg(&["train", "--preset", "toy", "--epochs", "3", "--out", path(&first)]).status.success());
    let second = dir.path().join("b");
    let res = groupreg(&["train", "--config", path(&first.join("config.toml")), "--out", path(&second)]);
    assert!(res.status.success());
    let a = std::fs::read_to_string(first.join("report.csv")).unwrap();
    let b = std::fs::read_to_string(second.join("report.csv")).unwrap();
    let strip_time = |s: &str| -> Vec<String> {
        s.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 9).map(|(_, c)| c.to_string()).collect()).collect()
    };
    assert_eq!(strip_time(&a), strip_time(&b));
}

#[test]
fn sweep_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let res = groupreg(&["sweep", "--preset", "toy", "--epochs", "3", "--ratios", "0,1/2", "--tries", "2", "--out", path(dir.path())]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let series = std::fs::read_to_string(dir.path().join("ratio_series.csv")).unwrap();
    assert_eq!(series.lines().count(), 5);
}

#[test]
fn gradcheck_passes() {
    let res = groupreg(&["gradcheck", "--seeds", "1"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("worst"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(groupreg(&["train", "--preset", "cifar", "--out", out]).status.code(), Some(1));
    assert_eq!(groupreg(&["train", "--out", out]).status.code(), Some(1));
    assert_eq!(groupreg(&["train", "--preset", "toy", "--reg", "bogus", "--out", out]).status.code(), Some(1));
    let missing = groupreg(&["train", "--preset", "boston", "--data-dir", path(&dir.path().join("nowhere")), "--out", out]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(groupreg(&["train", "--config", path(&dir.path().join("absent.toml")), "--out", out]).status.code(), Some(2));

    let base = dir.path().join("base");
    assert!(groupreg(&["train", "--preset", "toy", "--epochs", "1", "--out", path(&base)]).status.success());
    let text = std::fs::read_to_string(base.join("config.toml")).unwrap();
    assert!(text.contains("lr = 0.001"));
    let cfg = dir.path().join("explode.toml");
    std::fs::write(&cfg, text.replace("lr = 0.001", "lr = 1e300")).unwrap();
    let res = groupreg(&["train", "--config", path(&cfg), "--epochs", "5", "--out", out]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
