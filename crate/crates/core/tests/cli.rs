use std::process::Command;

fn mtdfl() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mtdfl"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn simulate_then_replot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    std::fs::write(
        &cfg,
        "seeds = 1\nepisodes = 2\neval_episodes = 1\niterations = 2\n\n[data]\ntest_size = 200\npool_min = 300\npool_max = 600\n\n[anticipator]\npredictor = \"oracle\"\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = mtdfl()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--mode", "fl", "--mode", "mtd-fl", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("MTD-FL"), "{stdout}");
    for f in [
        "config.toml",
        "metrics.jsonl",
        "summary.csv",
        "training_curve.csv",
        "reward.svg",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    std::fs::remove_file(run.join("accuracy.svg")).unwrap();
    let out = mtdfl().arg("plot").arg("--run").arg(&run).output().unwrap();
    assert!(out.status.success());
    assert!(run.join("accuracy.svg").is_file());
}

#[test]
fn validate_config_reports_bad_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "seed = 9\n").unwrap();
    let out = mtdfl()
        .args(["validate-config", "--config"])
        .arg(&good)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("seed = 9"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 9\nsurprise = true\n").unwrap();
    let out = mtdfl()
        .args(["validate-config", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("surprise"));
}

#[test]
fn train_anticipator_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("a.ckpt");
    let out = mtdfl()
        .args([
            "train-anticipator",
            "--arch",
            "lstm",
            "--hidden",
            "5",
            "--epochs",
            "3",
            "--out",
        ])
        .arg(&ck)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ck.is_file());
}
