//! Experiment harness: scenario configs, synthetic data, the episode loop,
//! metrics persistence and plots.

pub mod config;
pub mod episode;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod synth;
pub mod trace;

pub use config::{DefenseMode, PredictorKind, ScenarioConfig};
pub use episode::{run_episode, AgentRuntime, Assets, EpisodeOutcome, EpisodeSpec, Scenario};
pub use experiment::{run_all, run_experiment, run_seed, ExperimentReport, SeedRun};
pub use metrics::{MetricsRecord, Phase};
pub use plot::emit_plots;
