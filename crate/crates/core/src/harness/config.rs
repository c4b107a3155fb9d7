//! Scenario configuration.
//!
//! Configs are TOML documents. Every section is optional and falls back to
//! the reference scenario; unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adversary::{AttackConfig, AttackKind};
use crate::anticipator::{AnticipatorTrainConfig, DEFAULT_WINDOW};
use crate::flengine::{LocalTrainConfig, Weighting};
use crate::mtdagent::AgentConfig;
use crate::netmodel::{dbm_to_watts, ChannelParams, GridWorld, Point, RateLog, TurnProbs};
use crate::tensorkit::OptimizerConfig;
use crate::timemodel::{AggregationMode, ComputeCosts};
use crate::{Error, Result};

/// How participants are chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefenseMode {
    /// All devices, no attack.
    Fl,
    /// All devices, compromised devices poison their uploads.
    FlAttack,
    /// Learned topology mutation under attack.
    MtdFl,
    /// Block `k` uniformly chosen devices per iteration, under attack.
    RndMtd(usize),
}

impl DefenseMode {
    pub fn is_attacked(self) -> bool {
        !matches!(self, DefenseMode::Fl)
    }

    pub fn uses_agent(self) -> bool {
        matches!(self, DefenseMode::MtdFl)
    }

    /// File-system friendly name.
    pub fn slug(self) -> String {
        match self {
            DefenseMode::Fl => "fl".into(),
            DefenseMode::FlAttack => "fl-attack".into(),
            DefenseMode::MtdFl => "mtd-fl".into(),
            DefenseMode::RndMtd(k) => format!("rnd-mtd-{k}"),
        }
    }
}

impl fmt::Display for DefenseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefenseMode::Fl => f.write_str("FL"),
            DefenseMode::FlAttack => f.write_str("FL-Attack"),
            DefenseMode::MtdFl => f.write_str("MTD-FL"),
            DefenseMode::RndMtd(k) => write!(f, "RND-MTD({k})"),
        }
    }
}

impl FromStr for DefenseMode {
    type Err = Error;

    /// Accepts `FL`, `FL-Attack`, `MTD-FL`, `RND-MTD` (k = 2) and
    /// `RND-MTD(k)`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        match t.as_str() {
            "FL" => return Ok(DefenseMode::Fl),
            "FL-ATTACK" => return Ok(DefenseMode::FlAttack),
            "MTD-FL" => return Ok(DefenseMode::MtdFl),
            "RND-MTD" => return Ok(DefenseMode::RndMtd(2)),
            _ => {}
        }
        if let Some(k) = t
            .strip_prefix("RND-MTD(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|k| k.trim().parse().ok())
        {
            return Ok(DefenseMode::RndMtd(k));
        }
        Err(Error::Config(format!(
            "unknown defense mode {s:?} (expected FL, FL-Attack, MTD-FL or RND-MTD(k))"
        )))
    }
}

impl Serialize for DefenseMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DefenseMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Hz.
    pub cpu: f64,
    /// Hz.
    pub bandwidth: f64,
    pub tx_power_dbm: f64,
    /// Parameter units per second between the station and the cloud.
    pub backhaul_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub devices: usize,
    pub grid: GridWorld,
    pub turns: TurnProbs,
    pub speed_kmh: f64,
    /// Simulated seconds of movement between two FL iterations.
    pub step_seconds: f64,
    pub cpu_min: f64,
    pub cpu_max: f64,
    pub device_tx_power_dbm: f64,
    pub path_loss_coeff: f64,
    pub path_loss_exponent: f64,
    pub noise_dbm: f64,
    pub rate_log: RateLog,
    pub stations: Vec<StationConfig>,
    /// Optional CSV of `step,device_id,x,y` rows replacing random mobility.
    pub position_trace: Option<String>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let station = |x, y, cpu, bandwidth| StationConfig {
            x,
            y,
            radius: 300.0,
            cpu,
            bandwidth,
            tx_power_dbm: 34.0,
            backhaul_rate: 1e9,
        };
        NetworkConfig {
            devices: 10,
            grid: GridWorld::default(),
            turns: TurnProbs::default(),
            speed_kmh: 45.0,
            step_seconds: 4.0,
            cpu_min: 1.9e9,
            cpu_max: 2.4e9,
            device_tx_power_dbm: 23.0,
            path_loss_coeff: 1.0,
            path_loss_exponent: 5.0,
            noise_dbm: -174.0,
            rate_log: RateLog::Natural,
            stations: vec![
                station(50.0, 50.0, 3.2e9, 28e6),
                station(350.0, 350.0, 2.6e9, 30e6),
            ],
            position_trace: None,
        }
    }
}

impl NetworkConfig {
    pub fn channel(&self) -> ChannelParams {
        ChannelParams {
            path_loss_coeff: self.path_loss_coeff,
            path_loss_exponent: self.path_loss_exponent,
            noise_power: dbm_to_watts(self.noise_dbm),
            log: self.rate_log,
        }
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    pub fn station_points(&self) -> Vec<Point> {
        self.stations.iter().map(|s| Point::new(s.x, s.y)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub train_cycles_per_sample: f64,
    pub aggregate_cycles_per_unit: f64,
    pub inference_cycles: f64,
    pub cloud_cpu: f64,
    pub aggregation: AggregationMode,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            train_cycles_per_sample: 1e3,
            aggregate_cycles_per_unit: 1e3,
            inference_cycles: 1e5,
            cloud_cpu: 3.2e9,
            aggregation: AggregationMode::EdgeCloud,
        }
    }
}

impl TimeConfig {
    pub fn costs(&self, local_epochs: usize, model_size: usize) -> ComputeCosts {
        ComputeCosts {
            train_cycles_per_sample: self.train_cycles_per_sample,
            aggregate_cycles_per_unit: self.aggregate_cycles_per_unit,
            inference_cycles: self.inference_cycles,
            local_epochs,
            model_size: model_size as f64,
        }
    }
}

/// How large the per-iteration training pool is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSchedule {
    /// Grows linearly from `pool_min` in the first iteration to `pool_max`
    /// in the last.
    #[default]
    Ramp,
    /// Uniform in `[pool_min, pool_max]` each iteration.
    Uniform,
}

/// Synthetic flow-feature task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub features: usize,
    /// Leading features on the unit scale.
    pub fast_dims: usize,
    pub fast_separation: f64,
    pub slow_separation: f64,
    /// Scale of the remaining features.
    pub slow_scale: f64,
    /// Share of label 1.
    pub balance: f64,
    pub test_size: usize,
    pub pool_min: usize,
    pub pool_max: usize,
    pub pool_schedule: PoolSchedule,
    /// Optional CSV flow pool used instead of the generator.
    pub flows_csv: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            features: 32,
            fast_dims: 4,
            fast_separation: 1.35,
            slow_separation: 2.45,
            slow_scale: 0.15,
            balance: 0.5,
            test_size: 2500,
            pool_min: 2000,
            pool_max: 10000,
            pool_schedule: PoolSchedule::Ramp,
            flows_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlConfig {
    /// Hidden ReLU widths of the task model; empty for a linear classifier.
    pub hidden: Vec<usize>,
    pub local: LocalTrainConfig,
    pub weighting: Weighting,
    /// Keep the global model across episodes instead of resetting it.
    pub persist_model: bool,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            hidden: Vec::new(),
            local: LocalTrainConfig {
                epochs: 5,
                batch_size: 32,
                optimizer: OptimizerConfig::Sgd { lr: 0.3 },
            },
            weighting: Weighting::DataSize,
            persist_model: false,
        }
    }
}

/// Synthetic traffic seen by the anticipator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub feature_width: usize,
    /// Mean shift of attack traffic in units of the benign spread.
    pub snr: f64,
    /// Benign events in each device log before the first iteration.
    pub initial_benign: usize,
    /// Benign events a device receives in an iteration it is not attacked.
    pub benign_per_iteration: usize,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            feature_width: 16,
            snr: 3.0,
            initial_benign: 20,
            benign_per_iteration: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// Recurrent model trained on synthetic traffic at the start of a run.
    #[default]
    Learned,
    Oracle,
    NoisyOracle,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnticipatorConfig {
    pub predictor: PredictorKind,
    pub window: usize,
    /// One predictor per device instead of a shared one.
    pub per_device: bool,
    /// Rates of the noisy oracle.
    pub fp: f64,
    pub fn_rate: f64,
    /// Output of the constant predictor.
    pub constant: f64,
    pub train: AnticipatorTrainConfig,
    /// Synthetic logs used for training.
    pub train_logs: usize,
    pub train_benign: usize,
    pub train_flows: usize,
    /// Load a checkpoint instead of training.
    pub checkpoint: Option<String>,
}

impl Default for AnticipatorConfig {
    fn default() -> Self {
        AnticipatorConfig {
            predictor: PredictorKind::Learned,
            window: DEFAULT_WINDOW,
            per_device: false,
            fp: 0.24,
            fn_rate: 0.27,
            constant: 0.0,
            train: AnticipatorTrainConfig::default(),
            train_logs: 10,
            train_benign: 150,
            train_flows: 8,
            checkpoint: None,
        }
    }
}

/// The whole scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// First seed; seed `k` of a multi-seed run is `seed + k`.
    pub seed: u64,
    pub seeds: usize,
    /// Training episodes of the agent.
    pub episodes: usize,
    /// Greedy episodes reported for every mode.
    pub eval_episodes: usize,
    pub iterations: usize,
    pub modes: Vec<DefenseMode>,
    pub network: NetworkConfig,
    pub time: TimeConfig,
    pub data: DataConfig,
    pub fl: FlConfig,
    pub attack: AttackConfig,
    pub traffic: TrafficConfig,
    pub anticipator: AnticipatorConfig,
    pub agent: AgentConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            seeds: 25,
            episodes: 400,
            eval_episodes: 5,
            iterations: 5,
            modes: vec![
                DefenseMode::Fl,
                DefenseMode::FlAttack,
                DefenseMode::RndMtd(2),
                DefenseMode::MtdFl,
            ],
            network: NetworkConfig::default(),
            time: TimeConfig::default(),
            data: DataConfig::default(),
            fl: FlConfig::default(),
            attack: AttackConfig::default(),
            traffic: TrafficConfig::default(),
            anticipator: AnticipatorConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64)
            .map(|k| self.seed.wrapping_add(k))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let n = self.network.devices;
        if n == 0 {
            return fail("network.devices must be positive".into());
        }
        if self.seeds == 0 || self.iterations == 0 {
            return fail("seeds and iterations must be positive".into());
        }
        if self.modes.is_empty() {
            return fail("at least one defense mode is required".into());
        }
        for m in &self.modes {
            if let DefenseMode::RndMtd(k) = m {
                if *k >= n {
                    return fail(format!("{m} blocks every one of the {n} devices"));
                }
            }
        }
        let net = &self.network;
        net.grid.validate()?;
        net.turns.validate()?;
        net.channel().validate()?;
        if !(net.speed_kmh >= 0.0 && net.step_seconds >= 0.0) {
            return fail("speed and step duration must be non-negative".into());
        }
        if !(net.cpu_min > 0.0 && net.cpu_max >= net.cpu_min) {
            return fail(format!(
                "bad device CPU range [{}, {}]",
                net.cpu_min, net.cpu_max
            ));
        }
        if net.stations.is_empty() {
            return fail("at least one base station is required".into());
        }
        for (i, s) in net.stations.iter().enumerate() {
            if !(s.radius > 0.0 && s.cpu > 0.0 && s.bandwidth > 0.0 && s.backhaul_rate > 0.0) {
                return fail(format!(
                    "station {i} needs positive radius, cpu, bandwidth and backhaul"
                ));
            }
        }
        let t = &self.time;
        if !(t.cloud_cpu > 0.0) {
            return fail("time.cloud_cpu must be positive".into());
        }
        self.time.costs(self.fl.local.epochs.max(1), 1).validate()?;
        let d = &self.data;
        if d.features == 0 || d.fast_dims > d.features || d.test_size == 0 {
            return fail("data needs features > 0, fast_dims <= features and a test set".into());
        }
        if !(0.0..=1.0).contains(&d.balance) || d.pool_max < d.pool_min || d.pool_min == 0 {
            return fail("data needs balance in [0, 1] and 0 < pool_min <= pool_max".into());
        }
        if self.modes.iter().any(|m| m.is_attacked()) && self.attack.kind != AttackKind::None {
            self.attack.validate(n)?;
        }
        let a = &self.anticipator;
        if a.window == 0 || self.traffic.feature_width == 0 {
            return fail("anticipator.window and traffic.feature_width must be positive".into());
        }
        if ![a.fp, a.fn_rate, a.constant]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
        {
            return fail("anticipator fp, fn_rate and constant must lie in [0, 1]".into());
        }
        self.agent.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_round_trip() {
        for m in [
            DefenseMode::Fl,
            DefenseMode::FlAttack,
            DefenseMode::MtdFl,
            DefenseMode::RndMtd(4),
        ] {
            assert_eq!(m.to_string().parse::<DefenseMode>().unwrap(), m);
        }
        assert_eq!(
            "rnd-mtd".parse::<DefenseMode>().unwrap(),
            DefenseMode::RndMtd(2)
        );
        assert!("MTD".parse::<DefenseMode>().is_err());
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_use_defaults() {
        let cfg = ScenarioConfig::from_toml_str(
            "seed = 9\nmodes = [\"FL\", \"RND-MTD(4)\"]\n[agent]\nhidden = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.modes, vec![DefenseMode::Fl, DefenseMode::RndMtd(4)]);
        assert_eq!(cfg.agent.hidden, 8);
        assert_eq!(cfg.network.devices, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("sead = 1\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[agent]\ngama = 0.2\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[network]\ndevices = 0\n").is_err());
    }
}
