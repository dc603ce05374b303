//! The `lenc` binary end to end on a small scenario.

use std::process::Command;

use lenc::harness::config::ExperimentConfig;

fn lenc(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lenc")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn run_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml(include_str!("../configs/expert_two_students.toml")).unwrap();
    cfg.dataset.per_class = 150;
    cfg.stream_size = 60;
    cfg.schedule.repeats = 1;
    cfg.pretrain.epochs = 150;
    cfg.protocol.train.epochs = 150;
    let config = dir.path().join("small.toml");
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();
    let c = config.to_str().unwrap();

    let run = dir.path().join("run");
    let text = lenc(&["run", "--config", c, "--out", run.to_str().unwrap()]);
    assert!(text.contains("community accuracy"), "{text}");
    for f in ["metrics.csv", "trace.log", "reports.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert_eq!(lenc(&["report", "--in", run.to_str().unwrap()]), text);

    let sw = dir.path().join("sweep");
    let text = lenc(&[
        "sweep", "--config", c, "--axis", "stream_size", "--values", "20,60", "--seeds", "1", "--out",
        sw.to_str().unwrap(),
    ]);
    assert!(text.contains("student_accuracy"), "{text}");
    assert!(sw.join("aggregate.csv").exists());
    assert!(sw.join("runs/stream_size=20/seed=1/metrics.csv").exists());
}

#[test]
fn bad_axis_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_lenc"))
        .args(["sweep", "--config", "missing.toml", "--axis", "x", "--values", "1", "--seeds", "1", "--out", "/tmp/none"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
