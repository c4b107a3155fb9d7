//! Synthetic stand-ins for the flow dataset and the botnet traffic trace.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{DataConfig, TrafficConfig};
use crate::anticipator::{Event, EventSequence};
use crate::flengine::DeviceShard;
use crate::{Error, Result};

fn unit_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    loop {
        let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Binary flow classification task with two feature scales.
///
/// A sample with label `y` and sign `s = 2y − 1` has fast features
/// `N(0, 1) + s·m_f/2·u_f` and slow features `σ_s (N(0, 1) + s·m_s/2·u_s)`
/// for random unit directions `u_f`, `u_s`. The slow block carries most of
/// the signal but a plain SGD learner picks it up gradually, so accuracy
/// keeps improving over several FL rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTask {
    features: usize,
    fast_dims: usize,
    fast_dir: Vec<f64>,
    slow_dir: Vec<f64>,
    fast_separation: f64,
    slow_separation: f64,
    slow_scale: f64,
    balance: f64,
}

impl FlowTask {
    pub fn new<R: Rng + ?Sized>(cfg: &DataConfig, rng: &mut R) -> Result<Self> {
        if cfg.features == 0 || cfg.fast_dims > cfg.features {
            return Err(Error::Config(format!(
                "flow task needs 0 < fast_dims <= features, got {} / {}",
                cfg.fast_dims, cfg.features
            )));
        }
        if !(0.0..=1.0).contains(&cfg.balance) {
            return Err(Error::Config(format!(
                "class balance {} outside [0, 1]",
                cfg.balance
            )));
        }
        Ok(FlowTask {
            features: cfg.features,
            fast_dims: cfg.fast_dims,
            fast_dir: unit_vector(cfg.fast_dims, rng),
            slow_dir: unit_vector(cfg.features - cfg.fast_dims, rng),
            fast_separation: cfg.fast_separation,
            slow_separation: cfg.slow_separation,
            slow_scale: cfg.slow_scale,
            balance: cfg.balance,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Draws one labeled sample into `x`.
    pub fn draw_into<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) -> usize {
        let y = usize::from(rng.gen::<f64>() < self.balance);
        let s = if y == 1 { 1.0 } else { -1.0 };
        let (fast, slow) = x.split_at_mut(self.fast_dims);
        for (v, d) in fast.iter_mut().zip(&self.fast_dir) {
            let n: f64 = rng.sample(StandardNormal);
            *v = n + s * self.fast_separation / 2.0 * d;
        }
        for (v, d) in slow.iter_mut().zip(&self.slow_dir) {
            let n: f64 = rng.sample(StandardNormal);
            *v = self.slow_scale * (n + s * self.slow_separation / 2.0 * d);
        }
        y
    }

    pub fn sample<R: Rng + ?Sized>(&self, device: usize, n: usize, rng: &mut R) -> DeviceShard {
        let mut shard = DeviceShard::empty(device, self.features);
        let mut x = vec![0.0; self.features];
        for _ in 0..n {
            let y = self.draw_into(&mut x, rng);
            shard.push(&x, y);
        }
        shard
    }

    /// A pool of `n` samples where every sample lands on a uniformly chosen
    /// device, so shard sizes are multinomial.
    pub fn sample_shards<R: Rng + ?Sized>(
        &self,
        devices: usize,
        n: usize,
        rng: &mut R,
    ) -> Vec<DeviceShard> {
        let mut shards: Vec<DeviceShard> = (0..devices)
            .map(|u| DeviceShard::empty(u, self.features))
            .collect();
        let mut x = vec![0.0; self.features];
        for _ in 0..n {
            let u = rng.gen_range(0..devices);
            let y = self.draw_into(&mut x, rng);
            shards[u].push(&x, y);
        }
        shards
    }
}

/// A pool of `n` binary-labeled flow vectors.
pub fn gen_synthetic_flows<R: Rng + ?Sized>(
    n: usize,
    feature_width: usize,
    class_balance: f64,
    rng: &mut R,
) -> Result<DeviceShard> {
    let cfg = DataConfig {
        features: feature_width,
        fast_dims: DataConfig::default().fast_dims.min(feature_width),
        balance: class_balance,
        ..DataConfig::default()
    };
    Ok(FlowTask::new(&cfg, rng)?.sample(0, n, rng))
}

/// Event generator for benign and attack traffic.
///
/// Benign events are standard normal. The `window` precursor events of an
/// attack flow are shifted by `snr` along one direction and the final,
/// attack-labeled event by `snr` along an orthogonal one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGen {
    width: usize,
    window: usize,
    precursor_shift: Vec<f64>,
    attack_shift: Vec<f64>,
}

impl TrafficGen {
    pub fn new(cfg: &TrafficConfig, window: usize) -> Result<Self> {
        if cfg.feature_width == 0 || window == 0 {
            return Err(Error::Config(
                "traffic needs a positive width and window".into(),
            ));
        }
        let w = cfg.feature_width;
        let a = cfg.snr / (w as f64).sqrt();
        Ok(TrafficGen {
            width: w,
            window,
            precursor_shift: vec![a; w],
            attack_shift: (0..w).map(|k| if k % 2 == 0 { a } else { -a }).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn shifted<R: Rng + ?Sized>(&self, shift: Option<&[f64]>, attack: bool, rng: &mut R) -> Event {
        let features = (0..self.width)
            .map(|k| {
                let n: f64 = rng.sample(StandardNormal);
                n + shift.map_or(0.0, |s| s[k])
            })
            .collect();
        Event { features, attack }
    }

    pub fn benign<R: Rng + ?Sized>(&self, rng: &mut R) -> Event {
        self.shifted(None, false, rng)
    }

    pub fn precursors<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Event> {
        (0..self.window)
            .map(|_| self.shifted(Some(&self.precursor_shift), false, rng))
            .collect()
    }

    pub fn attack_event<R: Rng + ?Sized>(&self, rng: &mut R) -> Event {
        self.shifted(Some(&self.attack_shift), true, rng)
    }

    /// `window` precursors followed by one attack-labeled event.
    pub fn attack_flow<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Event> {
        let mut flow = self.precursors(rng);
        flow.push(self.attack_event(rng));
        flow
    }
}

/// `logs` device logs holding `n_benign` benign events and `n_attack_flows`
/// attack flows each, with flows inserted at uniformly random positions
/// between benign events.
pub fn gen_synthetic_traffic<R: Rng + ?Sized>(
    gen: &TrafficGen,
    logs: usize,
    n_benign: usize,
    n_attack_flows: usize,
    rng: &mut R,
) -> Result<Vec<EventSequence>> {
    (0..logs)
        .map(|device| {
            let mut slots: Vec<usize> = (0..n_attack_flows)
                .map(|_| rng.gen_range(0..=n_benign))
                .collect();
            slots.sort_unstable();
            let mut log = EventSequence::new(device, gen.width());
            let mut next = 0;
            for k in 0..=n_benign {
                while next < slots.len() && slots[next] == k {
                    log.extend(&gen.attack_flow(rng))?;
                    next += 1;
                }
                if k < n_benign {
                    log.push(gen.benign(rng))?;
                }
            }
            Ok(log)
        })
        .collect()
}
