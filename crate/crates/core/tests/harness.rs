//! End-to-end runs of the experiment harness on small scenarios.

use std::path::Path;

use mtdfl::harness::config::{DefenseMode, PredictorKind, ScenarioConfig};
use mtdfl::harness::metrics::{read_jsonl, summarize, Phase};
use mtdfl::harness::{run_all, run_experiment, Assets};

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seeds: 2,
        episodes: 4,
        eval_episodes: 2,
        iterations: 3,
        ..ScenarioConfig::default()
    };
    cfg.data.test_size = 400;
    cfg.data.pool_min = 500;
    cfg.data.pool_max = 1500;
    cfg.anticipator.predictor = PredictorKind::Oracle;
    cfg
}

#[test]
fn plain_fl_uses_every_covered_device() {
    let mut cfg = small();
    cfg.modes = vec![DefenseMode::Fl];
    let (runs, _) = run_all(&cfg, &Assets::load(&cfg).unwrap()).unwrap();
    for run in &runs {
        assert!(run.curve.is_empty() && run.policies.is_none());
        for r in &run.records {
            assert_eq!(r.phase, Phase::Eval);
            assert!(r.compromised.is_empty());
            assert_eq!(r.excluded_ratio, 1.0);
            assert!(r.profile.is_empty());
        }
    }
}

#[test]
fn random_mutation_keeps_k_out() {
    let mut cfg = small();
    cfg.modes = vec![DefenseMode::RndMtd(2)];
    for s in &mut cfg.network.stations {
        s.radius = 5_000.0;
    }
    let (runs, _) = run_all(&cfg, &Assets::load(&cfg).unwrap()).unwrap();
    for r in runs.iter().flat_map(|r| &r.records) {
        assert_eq!(r.participants.len(), cfg.network.devices - 2);
        assert!(r.profile.is_empty());
    }
}

#[test]
fn oracle_defense_excludes_every_attacker() {
    let mut cfg = small();
    cfg.modes = vec![DefenseMode::FlAttack, DefenseMode::MtdFl];
    let (runs, _) = run_all(&cfg, &Assets::load(&cfg).unwrap()).unwrap();
    for run in &runs {
        for r in &run.records {
            match run.mode {
                DefenseMode::MtdFl => {
                    assert_eq!(r.excluded_ratio, 1.0);
                    assert_eq!(r.violations, 0);
                    assert_eq!(r.profile.len(), cfg.network.devices);
                }
                _ => {
                    assert!(r.profile.is_empty());
                    assert_eq!(r.reward, 0.0);
                }
            }
        }
    }
    let mtd = runs.iter().find(|r| r.mode == DefenseMode::MtdFl).unwrap();
    assert_eq!(mtd.curve.len(), cfg.episodes);
    assert!(mtd.policies.is_some());
}

#[test]
fn single_seed_has_zero_spread() {
    let mut cfg = small();
    cfg.seeds = 1;
    cfg.modes = vec![DefenseMode::Fl];
    let (runs, _) = run_all(&cfg, &Assets::load(&cfg).unwrap()).unwrap();
    let records: Vec<_> = runs.into_iter().flat_map(|r| r.records).collect();
    let rows = summarize(&records);
    assert_eq!(rows.len(), cfg.iterations);
    for row in rows {
        assert_eq!(row.runs, 1);
        assert_eq!(
            (row.accuracy_std, row.t_int_std, row.excluded_ratio_std),
            (0.0, 0.0, 0.0)
        );
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn identical_runs_write_identical_metrics() {
    let mut cfg = small();
    cfg.seeds = 1;
    cfg.modes = vec![
        DefenseMode::FlAttack,
        DefenseMode::RndMtd(2),
        DefenseMode::MtdFl,
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    for f in [
        "metrics.jsonl",
        "summary.csv",
        "training_curve.csv",
        "accuracy.csv",
    ] {
        assert_eq!(
            read(&a.path().join(f)),
            read(&b.path().join(f)),
            "{f} differs"
        );
    }
    let back = read_jsonl(&a.path().join("metrics.jsonl")).unwrap();
    assert!(!back.is_empty());
}

#[test]
fn golden_metrics_are_reproduced() {
    let mut cfg = small();
    cfg.seeds = 1;
    cfg.episodes = 2;
    cfg.eval_episodes = 1;
    cfg.iterations = 2;
    cfg.modes = vec![DefenseMode::Fl, DefenseMode::MtdFl];
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir.path()).unwrap();
    let got = read(&dir.path().join("metrics.jsonl"));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/small.jsonl");
    if std::env::var_os("MTDFL_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &got).unwrap();
    }
    assert_eq!(
        String::from_utf8(got).unwrap(),
        String::from_utf8(read(&golden)).unwrap(),
        "rerun with MTDFL_BLESS=1 after an intended change"
    );
}

#[test]
fn plots_agree_with_their_tables() {
    let mut cfg = small();
    cfg.seeds = 1;
    cfg.modes = vec![DefenseMode::Fl, DefenseMode::MtdFl];
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&cfg, dir.path()).unwrap();
    for name in ["reward", "accuracy", "excluded", "recognition_time"] {
        assert!(
            report
                .files
                .iter()
                .any(|f| f.ends_with(format!("{name}.svg"))),
            "{name}.svg missing"
        );
    }

    let mut rdr = csv::Reader::from_path(dir.path().join("accuracy.csv")).unwrap();
    let rows: Vec<(String, usize, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), cfg.modes.len() * cfg.iterations);
    for mode in &cfg.modes {
        let its: Vec<usize> = rows
            .iter()
            .filter(|r| r.0 == mode.to_string())
            .map(|r| r.1)
            .collect();
        assert_eq!(its, (1..=cfg.iterations).collect::<Vec<_>>());
    }

    let svg = std::fs::read_to_string(dir.path().join("accuracy.svg")).unwrap();
    let plotted: Vec<f64> = svg
        .split("data-value=\"")
        .skip(1)
        .map(|s| s[..s.find('"').unwrap()].parse().unwrap())
        .collect();
    assert_eq!(plotted.len(), rows.len());
    for v in plotted {
        assert!(
            rows.iter()
                .any(|r| (r.2 - v).abs() <= 1e-9 * v.abs().max(1.0)),
            "{v} not in accuracy.csv"
        );
    }
}

#[test]
fn global_loss_reward_is_finite() {
    let mut cfg = small();
    cfg.seeds = 1;
    cfg.modes = vec![DefenseMode::MtdFl];
    cfg.agent.reward_loss = mtdfl::mtdagent::RewardLoss::Global;
    let (runs, _) = run_all(&cfg, &Assets::load(&cfg).unwrap()).unwrap();
    let rewards: Vec<f64> = runs[0].records.iter().map(|r| r.reward).collect();
    assert!(rewards.iter().all(|r| r.is_finite() && *r >= 0.0));
    assert!(rewards.iter().any(|r| *r > 0.0));
}
