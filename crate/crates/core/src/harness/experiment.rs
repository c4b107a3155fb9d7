//! Multi-seed experiments and run-directory persistence.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{DefenseMode, PredictorKind, ScenarioConfig};
use super::episode::{run_episode, AgentRuntime, Assets, EpisodeSpec, Scenario};
use super::metrics::{
    moving_average, summarize, write_csv, write_jsonl, CurvePoint, MetricsRecord, Phase, SummaryRow,
};
use super::plot::emit_plots;
use crate::anticipator::{Predictor, PredictorSet};
use crate::mtdagent::{epsilon_at, PolicySet};
use crate::{Error, Result};

/// Outcome of one (mode, seed) pair.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub mode: DefenseMode,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Cumulative reward per training episode (MTD-FL only).
    pub curve: Vec<CurvePoint>,
    pub policies: Option<PolicySet>,
}

/// Runs the training phase (MTD-FL only) and the evaluation phase of one
/// mode for one seed.
pub fn run_seed(
    scn: &Scenario,
    mode: DefenseMode,
    predictors: Option<&PredictorSet>,
) -> Result<SeedRun> {
    let cfg = &scn.cfg;
    let mut records = Vec::new();
    let mut curve = Vec::new();
    let mut agent = if mode.uses_agent() {
        if predictors.is_none() {
            return Err(Error::InvalidState("MTD-FL needs an anticipator".into()));
        }
        Some(AgentRuntime::new(scn)?)
    } else {
        None
    };
    let predictors = if mode.uses_agent() { predictors } else { None };

    if let Some(rt) = agent.as_mut() {
        let mut carried = None;
        for e in 0..cfg.episodes {
            let spec = EpisodeSpec {
                mode,
                phase: Phase::Train,
                episode: e,
                exploit_prob: epsilon_at(e, cfg.episodes, &cfg.agent),
                learn: true,
                start: carried.take(),
                predictors,
            };
            let out = run_episode(scn, &spec, Some(rt))?;
            if e % 50 == 0 {
                log::debug!(
                    "{mode} seed {} episode {e}: reward {:.4}, td {:.4}",
                    scn.seed,
                    out.cumulative_reward,
                    out.td_error
                );
            }
            curve.push(CurvePoint {
                seed: scn.seed,
                episode: e,
                reward: out.cumulative_reward,
            });
            if cfg.fl.persist_model {
                carried = Some(out.final_model);
            }
            records.extend(out.records);
        }
    }

    let mut carried = None;
    for e in 0..cfg.eval_episodes {
        let spec = EpisodeSpec {
            mode,
            phase: Phase::Eval,
            episode: e,
            exploit_prob: 1.0,
            learn: false,
            start: carried.take(),
            predictors,
        };
        let out = run_episode(scn, &spec, agent.as_mut())?;
        if cfg.fl.persist_model {
            carried = Some(out.final_model);
        }
        records.extend(out.records);
    }
    Ok(SeedRun {
        mode,
        seed: scn.seed,
        records,
        curve,
        policies: agent.map(|a| a.policies),
    })
}

/// Per seed: the scenario and, when MTD-FL is requested, its predictors.
fn prepare(
    cfg: &ScenarioConfig,
    assets: &Assets,
    modes: &[DefenseMode],
) -> Result<Vec<(Scenario, Option<PredictorSet>)>> {
    let need_predictor = modes.iter().any(|m| m.uses_agent());
    cfg.seed_list()
        .into_par_iter()
        .map(|seed| {
            let scn = Scenario::new(cfg, assets, seed)?;
            let pred = if need_predictor {
                Some(scn.build_predictors(assets)?)
            } else {
                None
            };
            Ok((scn, pred))
        })
        .collect()
}

/// Anticipators built for each seed, keyed by seed.
pub type SeedPredictors = Vec<(u64, PredictorSet)>;

/// Runs every configured mode over every seed without touching the disk.
/// Results are ordered by mode, then seed.
pub fn run_all(cfg: &ScenarioConfig, assets: &Assets) -> Result<(Vec<SeedRun>, SeedPredictors)> {
    cfg.validate()?;
    let prepared = prepare(cfg, assets, &cfg.modes)?;
    let jobs: Vec<(DefenseMode, usize)> = cfg
        .modes
        .iter()
        .flat_map(|&m| (0..prepared.len()).map(move |k| (m, k)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(mode, k)| {
            let (scn, pred) = &prepared[k];
            run_seed(scn, mode, pred.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let predictors = prepared
        .into_iter()
        .filter_map(|(scn, p)| p.map(|p| (scn.seed, p)))
        .collect();
    Ok((runs, predictors))
}

#[derive(Debug, Clone, Serialize)]
struct CurveRow {
    seed: u64,
    episode: usize,
    reward: f64,
    moving_average: f64,
}

/// Where an experiment wrote its outputs.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub run_dir: PathBuf,
    pub records: usize,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Runs the experiment and writes the run directory: the resolved config,
/// `metrics.jsonl`, `summary.csv`, `training_curve.csv`, checkpoints and
/// plots.
pub fn run_experiment(cfg: &ScenarioConfig, run_dir: &Path) -> Result<ExperimentReport> {
    let assets = Assets::load(cfg)?;
    let (runs, predictors) = run_all(cfg, &assets)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut files = Vec::new();
    let cfg_path = run_dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    files.push(cfg_path);

    let records: Vec<MetricsRecord> = runs
        .iter()
        .flat_map(|r| r.records.iter().cloned())
        .collect();
    let metrics = run_dir.join("metrics.jsonl");
    write_jsonl(&metrics, &records)?;
    files.push(metrics);

    let summary = summarize(&records);
    let summary_path = run_dir.join("summary.csv");
    write_csv(&summary_path, &summary)?;
    files.push(summary_path);

    let window = (cfg.episodes / 10).max(1);
    let mut curve_rows = Vec::new();
    for run in runs.iter().filter(|r| !r.curve.is_empty()) {
        let rewards: Vec<f64> = run.curve.iter().map(|c| c.reward).collect();
        for (c, ma) in run.curve.iter().zip(moving_average(&rewards, window)) {
            curve_rows.push(CurveRow {
                seed: c.seed,
                episode: c.episode,
                reward: c.reward,
                moving_average: ma,
            });
        }
    }
    if !curve_rows.is_empty() {
        let p = run_dir.join("training_curve.csv");
        write_csv(&p, &curve_rows)?;
        files.push(p);
    }

    for run in &runs {
        if let Some(policies) = &run.policies {
            let dir = run_dir.join("policies").join(format!("seed-{}", run.seed));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (u, ck) in policies.to_checkpoints().iter().enumerate() {
                let p = dir.join(format!("device-{u}.ckpt"));
                ck.save(&p)?;
                files.push(p);
            }
        }
    }
    if cfg.anticipator.predictor == PredictorKind::Learned {
        for (seed, set) in &predictors {
            let list: Vec<&Predictor> = match set {
                PredictorSet::Shared(p) => vec![p],
                PredictorSet::PerDevice(v) => v.iter().collect(),
            };
            for (k, p) in list.iter().enumerate() {
                let name = if list.len() == 1 {
                    format!("anticipator-seed-{seed}.ckpt")
                } else {
                    format!("anticipator-seed-{seed}-device-{k}.ckpt")
                };
                let path = run_dir.join(name);
                p.to_checkpoint()?.save(&path)?;
                files.push(path);
            }
        }
    }
    files.extend(emit_plots(run_dir)?);
    Ok(ExperimentReport {
        run_dir: run_dir.to_path_buf(),
        records: records.len(),
        summary,
        files,
    })
}
