use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde::Serialize;

use mtdfl::anticipator::{
    build_windows, evaluate_anticipator, pooled_windows, train_anticipator, EventSequence,
    WindowedDataset,
};
use mtdfl::harness::config::{DefenseMode, ScenarioConfig};
use mtdfl::harness::metrics::write_csv;
use mtdfl::harness::synth::{gen_synthetic_traffic, TrafficGen};
use mtdfl::harness::trace::load_events_csv;
use mtdfl::harness::{emit_plots, run_experiment};
use mtdfl::rng::{mix, SimRng};
use mtdfl::tensorkit::CellKind;

/// Default parent directory of run directories.
const OUTPUT_ROOT_VAR: &str = "MTDFL_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "mtdfl",
    version,
    about = "Hierarchical FL simulator with moving-target defense"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Gru,
    Lstm,
}

impl From<Arch> for CellKind {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Gru => CellKind::Gru,
            Arch::Lstm => CellKind::Lstm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, summaries and plots.
    Simulate {
        /// Scenario TOML; the reference scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// First seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of seeds (overrides the config).
        #[arg(long)]
        seeds: Option<usize>,
        /// Defense mode; repeat for several (overrides the config).
        #[arg(long = "mode")]
        modes: Vec<String>,
        /// Agent training episodes (overrides the config).
        #[arg(long)]
        episodes: Option<usize>,
        /// Run directory; defaults to `$MTDFL_OUTPUT_ROOT/run-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a recurrent attack anticipator and save a checkpoint.
    TrainAnticipator {
        /// Event CSV, or `synthetic`.
        #[arg(long, default_value = "synthetic")]
        data: String,
        #[arg(long, value_enum, default_value = "gru")]
        arch: Arch,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scenario TOML supplying traffic and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "anticipator.ckpt")]
        out: PathBuf,
    },
    /// Accuracy / FP / FN over the {GRU, LSTM} x {5, 8, 11, 16} grid.
    EvalAnticipator {
        /// Event CSV, or `synthetic`.
        #[arg(long, default_value = "synthetic")]
        data: String,
        /// Share of each log used for training; the rest is the test set.
        #[arg(long, default_value_t = 0.5)]
        train_share: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "anticipator_grid.csv")]
        out: PathBuf,
    },
    /// Re-render the plots of a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
    /// Check a scenario file and print the resolved config.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn load_logs(data: &str, cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Vec<EventSequence>> {
    if data == "synthetic" {
        let a = &cfg.anticipator;
        let gen = TrafficGen::new(&cfg.traffic, a.window)?;
        Ok(gen_synthetic_traffic(
            &gen,
            a.train_logs.max(1),
            a.train_benign,
            a.train_flows,
            rng,
        )?)
    } else {
        load_events_csv(Path::new(data)).with_context(|| format!("reading events from {data}"))
    }
}

/// Splits every log at `share` of its length into training and test windows.
fn split_windows(
    logs: &[EventSequence],
    window: usize,
    share: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let mut train = WindowedDataset {
        window,
        rows: Vec::new(),
    };
    let mut test = train.clone();
    for log in logs {
        let cut = ((log.len() as f64) * share).round() as usize;
        let head =
            EventSequence::from_events(log.device, log.width(), log.events()[..cut].to_vec())?;
        let tail =
            EventSequence::from_events(log.device, log.width(), log.events()[cut..].to_vec())?;
        if let Ok(ds) = build_windows(&head, window) {
            train.merge(ds)?;
        }
        if let Ok(ds) = build_windows(&tail, window) {
            test.merge(ds)?;
        }
    }
    Ok((train, test))
}

#[derive(Serialize)]
struct GridRow {
    model: String,
    hidden: usize,
    accuracy: f64,
    fp: f64,
    #[serde(rename = "fn")]
    fn_rate: f64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            seed,
            seeds,
            modes,
            episodes,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = seeds {
                cfg.seeds = n;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if !modes.is_empty() {
                cfg.modes = modes
                    .iter()
                    .map(|m| m.parse::<DefenseMode>())
                    .collect::<Result<_, _>>()?;
            }
            cfg.validate()?;
            let run_dir = match out {
                Some(p) => p,
                None => {
                    let root = std::env::var_os(OUTPUT_ROOT_VAR).unwrap_or_else(|| "runs".into());
                    PathBuf::from(root).join(format!("run-{}", cfg.seed))
                }
            };
            log::info!(
                "simulating {} mode(s) x {} seed(s), {} training episodes, into {}",
                cfg.modes.len(),
                cfg.seeds,
                cfg.episodes,
                run_dir.display()
            );
            let report = run_experiment(&cfg, &run_dir)?;
            for row in &report.summary {
                println!(
                    "{:<12} it {}  acc {:.4} ± {:.4}  excluded {:.3}  T_int {:.3e} s  participants {:.2}",
                    row.mode,
                    row.iteration,
                    row.accuracy_mean,
                    row.accuracy_std,
                    row.excluded_ratio_mean,
                    row.t_int_mean,
                    row.participants_mean
                );
            }
            println!(
                "{} records written to {}",
                report.records,
                report.run_dir.display()
            );
        }
        Command::TrainAnticipator {
            data,
            arch,
            hidden,
            epochs,
            seed,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut rng = SimRng::seed_from_u64(mix(seed, &[0]));
            let logs = load_logs(&data, &cfg, &mut rng)?;
            let dataset = pooled_windows(&logs, cfg.anticipator.window);
            if dataset.is_empty() {
                bail!(
                    "no log is longer than the window of {}",
                    cfg.anticipator.window
                );
            }
            let mut tc = cfg.anticipator.train;
            tc.arch = arch.into();
            tc.hidden = hidden;
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let predictor = train_anticipator(&dataset, &tc, &mut rng)?;
            let score = evaluate_anticipator(&predictor, &dataset)?;
            predictor.to_checkpoint()?.save(&out)?;
            println!(
                "{}: {} windows, training accuracy {:.4}, fp {:.4}, fn {:.4}; saved {}",
                predictor.name(),
                dataset.len(),
                score.accuracy,
                score.fp,
                score.fn_rate,
                out.display()
            );
        }
        Command::EvalAnticipator {
            data,
            train_share,
            seed,
            config,
            out,
        } => {
            if !(0.0..1.0).contains(&train_share) || train_share == 0.0 {
                bail!("--train-share must lie in (0, 1)");
            }
            let cfg = load_config(config.as_deref())?;
            let mut rng = SimRng::seed_from_u64(mix(seed, &[0]));
            let logs = load_logs(&data, &cfg, &mut rng)?;
            let (train, test) = split_windows(&logs, cfg.anticipator.window, train_share)?;
            if train.is_empty() || test.is_empty() {
                bail!("logs are too short to give both training and test windows");
            }
            let mut rows = Vec::new();
            for arch in [Arch::Gru, Arch::Lstm] {
                for hidden in [5, 8, 11, 16] {
                    let mut tc = cfg.anticipator.train;
                    tc.arch = arch.into();
                    tc.hidden = hidden;
                    let mut r = SimRng::seed_from_u64(mix(seed, &[1, hidden as u64]));
                    let p = train_anticipator(&train, &tc, &mut r)?;
                    let s = evaluate_anticipator(&p, &test)?;
                    println!(
                        "{:<5} {:>2}  accuracy {:.4}  fp {:.4}  fn {:.4}",
                        CellKind::from(arch),
                        hidden,
                        s.accuracy,
                        s.fp,
                        s.fn_rate
                    );
                    rows.push(GridRow {
                        model: CellKind::from(arch).to_string(),
                        hidden,
                        accuracy: s.accuracy,
                        fp: s.fp,
                        fn_rate: s.fn_rate,
                    });
                }
            }
            write_csv(&out, &rows)?;
            println!("wrote {}", out.display());
        }
        Command::Plot { run } => {
            let files = emit_plots(&run)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(Some(&config))?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}
