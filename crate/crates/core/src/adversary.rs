//! Model-poisoning adversary.
//!
//! At the start of each episode the adversary compromises a few devices.
//! While compromised they generate attack traffic on their event logs and
//! upload crafted models instead of honest ones:
//!
//! * Attack 1 pulls the estimated global model toward a scaled copy of
//!   itself, plus a little Gaussian noise.
//! * Attack 2 shifts every coordinate of the mean honest model by a
//!   multiple of the coordinate's standard deviation.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::anticipator::{Event, EventSequence};
use crate::flengine::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    #[default]
    None,
    Attack1,
    Attack2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Attack1Config {
    /// `λ`.
    pub lr: f64,
    /// Target model is `scale * global`.
    pub scale: f64,
    /// Standard deviation of the per-coordinate noise.
    pub noise: f64,
}

impl Default for Attack1Config {
    fn default() -> Self {
        Attack1Config {
            lr: 1.0,
            scale: -10.0,
            noise: 0.01,
        }
    }
}

/// Deviation multiplier for Attack 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZSetting {
    Manual(f64),
    /// `"auto"`: derived from the number of devices and attackers.
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for ZSetting {
    fn default() -> Self {
        ZSetting::Manual(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationSign {
    /// `mean − z·std` in every coordinate.
    #[default]
    Subtract,
    /// Push each coordinate away from the sign of its mean.
    AgainstMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Attack2Config {
    pub z: ZSetting,
    pub sign: DeviationSign,
}

/// Whose honest models the adversary averages to estimate the global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatePool {
    #[default]
    Participants,
    AllDevices,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub attack1: Attack1Config,
    pub attack2: Attack2Config,
    pub min_compromised: usize,
    pub max_compromised: usize,
    pub estimate_pool: EstimatePool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Attack1,
            attack1: Attack1Config::default(),
            attack2: Attack2Config::default(),
            min_compromised: 2,
            max_compromised: 4,
            estimate_pool: EstimatePool::Participants,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, n_devices: usize) -> Result<()> {
        if self.min_compromised > self.max_compromised || self.max_compromised > n_devices {
            return Err(Error::Config(format!(
                "compromised range {}..={} invalid for {n_devices} devices",
                self.min_compromised, self.max_compromised
            )));
        }
        if !(self.attack1.noise >= 0.0) {
            return Err(Error::Config("attack1 noise must be >= 0".into()));
        }
        if let ZSetting::Manual(z) = self.attack2.z {
            if !z.is_finite() {
                return Err(Error::Config("attack2 z must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Devices compromised in one episode and the iterations they act in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompromisePlan {
    pub episode: usize,
    /// Sorted device ids.
    pub compromised: Vec<usize>,
    /// `active[τ]`: whether the compromised devices attack in iteration τ.
    pub active: Vec<bool>,
}

impl CompromisePlan {
    /// Draws between `min` and `max` distinct devices, active every iteration.
    pub fn draw<R: Rng + ?Sized>(
        episode: usize,
        n_devices: usize,
        iterations: usize,
        cfg: &AttackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(n_devices)?;
        let count = rng.gen_range(cfg.min_compromised..=cfg.max_compromised);
        let mut compromised = sample(rng, n_devices, count).into_vec();
        compromised.sort_unstable();
        Ok(CompromisePlan {
            episode,
            compromised,
            active: vec![true; iterations],
        })
    }

    pub fn none(episode: usize, iterations: usize) -> Self {
        CompromisePlan {
            episode,
            compromised: Vec::new(),
            active: vec![false; iterations],
        }
    }

    /// Whether `device` attacks in `iteration`.
    pub fn attacks(&self, device: usize, iteration: usize) -> bool {
        self.active.get(iteration).copied().unwrap_or(false)
            && self.compromised.binary_search(&device).is_ok()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `(1 − λ + λ·scale)·global` plus Gaussian noise.
pub fn craft_attack1<R: Rng + ?Sized>(
    global: &ModelParams,
    cfg: &Attack1Config,
    rng: &mut R,
) -> Result<ModelParams> {
    let coeff = 1.0 - cfg.lr + cfg.lr * cfg.scale;
    let mut values: Vec<f64> = global.values.iter().map(|g| coeff * g).collect();
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise)
            .map_err(|e| Error::Config(format!("attack1 noise: {e}")))?;
        for v in &mut values {
            *v += normal.sample(rng);
        }
    }
    ModelParams::new(values, global.shapes.clone())
}

/// Coordinate-wise mean and population standard deviation.
pub fn mean_and_std(models: &[&ModelParams]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = models
        .first()
        .ok_or_else(|| Error::DegenerateStatistics("no models".into()))?;
    if models.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Aggregation("models differ in shape".into()));
    }
    let n = models.len() as f64;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for m in models {
        for (a, v) in mean.iter_mut().zip(&m.values) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; dim];
    for m in models {
        for ((s, v), mu) in var.iter_mut().zip(&m.values).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok((mean, std))
}

/// `mean_j − z·std_j` per coordinate (or pushed against the mean's sign).
pub fn craft_attack2(models: &[&ModelParams], z: f64, sign: DeviationSign) -> Result<ModelParams> {
    if models.len() < 2 {
        return Err(Error::DegenerateStatistics(format!(
            "attack 2 needs at least two models, got {}",
            models.len()
        )));
    }
    let (mean, std) = mean_and_std(models)?;
    let values = mean
        .iter()
        .zip(&std)
        .map(|(&mu, &sd)| match sign {
            DeviationSign::Subtract => mu - z * sd,
            DeviationSign::AgainstMean => {
                if mu < 0.0 {
                    mu + z * sd
                } else {
                    mu - z * sd
                }
            }
        })
        .collect();
    ModelParams::new(values, models[0].shapes.clone())
}

/// Attack-2 multiplier from the supporter-count rule: with `n` devices of
/// which `m` are malicious, `s = ⌊n/2 + 1⌋ − m` honest supporters are needed
/// and `z = Φ⁻¹((n − s)/n)`.
pub fn auto_z(n: usize, m: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::DegenerateStatistics("no devices".into()));
    }
    let s = (n / 2 + 1) as i64 - m as i64;
    let q = (n as i64 - s) as f64 / n as f64;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::DegenerateStatistics(format!(
            "supporter quantile {q} is outside (0, 1) for n = {n}, m = {m}"
        )));
    }
    let normal = StdNormal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(q))
}

/// Appends a whole attack flow to a device log.
///
/// The flow must hold `window + 1` events and end in an attack-labeled one.
pub fn inject_attack_traffic(log: &mut EventSequence, flow: &[Event], window: usize) -> Result<()> {
    check_flow(flow, window)?;
    log.extend(flow)
}

pub(crate) fn check_flow(flow: &[Event], window: usize) -> Result<()> {
    if flow.len() != window + 1 {
        return Err(Error::Config(format!(
            "attack flow must have {} events, got {}",
            window + 1,
            flow.len()
        )));
    }
    if !flow.last().is_some_and(|e| e.attack) {
        return Err(Error::Config(
            "attack flow must end in an attack event".into(),
        ));
    }
    Ok(())
}

/// One device's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub device: usize,
    pub params: ModelParams,
    pub samples: usize,
    /// Loss of the honest local training.
    pub loss: f64,
    pub poisoned: bool,
}

/// Replaces the uploads of compromised participants with crafted models.
///
/// `pool` holds the honest models the adversary can see. Returns how many
/// uploads were replaced.
pub fn poison_uploads<R: Rng + ?Sized>(
    uploads: &mut [Upload],
    pool: &[&ModelParams],
    plan: &CompromisePlan,
    cfg: &AttackConfig,
    iteration: usize,
    n_devices: usize,
    rng: &mut R,
) -> Result<usize> {
    let targets: Vec<usize> = uploads
        .iter()
        .enumerate()
        .filter(|(_, u)| plan.attacks(u.device, iteration))
        .map(|(k, _)| k)
        .collect();
    if targets.is_empty() || cfg.kind == AttackKind::None {
        return Ok(0);
    }
    let crafted = match cfg.kind {
        AttackKind::None => unreachable!("handled above"),
        AttackKind::Attack1 => {
            let (mean, _) = mean_and_std(pool)?;
            let estimate = ModelParams::new(mean, pool[0].shapes.clone())?;
            targets
                .iter()
                .map(|_| craft_attack1(&estimate, &cfg.attack1, rng))
                .collect::<Result<Vec<_>>>()?
        }
        AttackKind::Attack2 => {
            let z = match cfg.attack2.z {
                ZSetting::Manual(z) => z,
                ZSetting::Auto(_) => auto_z(n_devices, plan.compromised.len())?,
            };
            let model = if pool.len() < 2 {
                let (mean, _) = mean_and_std(pool)?;
                ModelParams::new(mean, pool[0].shapes.clone())?
            } else {
                craft_attack2(pool, z, cfg.attack2.sign)?
            };
            vec![model; targets.len()]
        }
    };
    for (k, model) in targets.iter().zip(crafted) {
        uploads[*k].params = model;
        uploads[*k].poisoned = true;
    }
    Ok(targets.len())
}
