//! One episode: a full FL run of `iterations` rounds under a defense mode.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use super::config::{DefenseMode, PredictorKind, ScenarioConfig};
use super::metrics::{excluded_ratio, MetricsRecord, Phase};
use super::synth::{gen_synthetic_traffic, FlowTask, TrafficGen};
use super::trace::{load_flows_csv, load_positions_csv};
use crate::adversary::{poison_uploads, AttackKind, CompromisePlan, EstimatePool, Upload};
use crate::anticipator::{
    anticipate, pooled_windows, train_anticipator, EventSequence, Predictor, PredictorSet,
};
use crate::flengine::{
    aggregate_hierarchical, evaluate, local_train, DeviceShard, ModelParams, TaskModel,
};
use crate::mtdagent::{
    bellman_update, build_state, compute_reward, enforce_confidence, ensure_participant,
    select_topology, AgentConfig, MdpState, ParticipantCost, PolicySet, RewardLoss, RunningMax,
    StateScale, Transition,
};
use crate::netmodel::{
    build_snapshot, dbm_to_watts, step_mobility, BaseStation, Device, GridWorld, Point,
};
use crate::rng::{mix, stream, SimRng, Stream};
use crate::tensorkit::Checkpoint;
use crate::timemodel::TimeModel;
use crate::{Error, Result};

/// Keys of evaluation episodes start here so that they are identical across
/// modes regardless of how many training episodes ran before.
pub const EVAL_KEY_BASE: u64 = 1 << 40;
const SEED_KEY: u64 = u64::MAX;

/// Files referenced by a config, loaded once per experiment.
#[derive(Debug, Clone, Default)]
pub struct Assets {
    pub flows: Option<DeviceShard>,
    pub positions: Option<Vec<Vec<Point>>>,
    pub predictor: Option<Predictor>,
}

impl Assets {
    pub fn load(cfg: &ScenarioConfig) -> Result<Self> {
        let flows = cfg
            .data
            .flows_csv
            .as_deref()
            .map(|p| load_flows_csv(Path::new(p)))
            .transpose()?;
        let positions = cfg
            .network
            .position_trace
            .as_deref()
            .map(|p| load_positions_csv(Path::new(p)))
            .transpose()?;
        if let Some(pos) = &positions {
            if pos.is_empty() || pos[0].len() != cfg.network.devices {
                return Err(Error::Config(format!(
                    "position trace must list {} devices per step",
                    cfg.network.devices
                )));
            }
        }
        let predictor = cfg
            .anticipator
            .checkpoint
            .as_deref()
            .map(|p| Predictor::from_checkpoint(&Checkpoint::load(Path::new(p))?))
            .transpose()?;
        Ok(Assets {
            flows,
            positions,
            predictor,
        })
    }
}

#[derive(Debug, Clone)]
enum DataSource {
    Synthetic(FlowTask),
    /// Rows sampled with replacement from a loaded pool.
    Pool(DeviceShard),
}

/// Everything fixed for one seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub world: GridWorld,
    pub stations: Vec<BaseStation>,
    pub time_model: TimeModel,
    pub template: TaskModel,
    pub test: DeviceShard,
    pub traffic: TrafficGen,
    pub scale: StateScale,
    source: DataSource,
    positions: Option<Vec<Vec<Point>>>,
}

impl Scenario {
    pub fn new(cfg: &ScenarioConfig, assets: &Assets, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = &cfg.network;
        let channel = net.channel();
        let stations: Vec<BaseStation> = net
            .stations
            .iter()
            .enumerate()
            .map(|(id, s)| BaseStation {
                id,
                position: Point::new(s.x, s.y),
                coverage_radius: s.radius,
                cpu_freq: s.cpu,
                bandwidth: s.bandwidth,
                backhaul_rate: s.backhaul_rate,
                tx_power: dbm_to_watts(s.tx_power_dbm),
            })
            .collect();
        let mut setup = stream(seed, Stream::Setup, &[SEED_KEY]);
        let (source, test, classes) = match &assets.flows {
            None => {
                let task = FlowTask::new(&cfg.data, &mut setup)?;
                let test = task.sample(usize::MAX, cfg.data.test_size, &mut setup);
                (DataSource::Synthetic(task), test, 2)
            }
            Some(pool) => {
                if pool.len() <= cfg.data.test_size {
                    return Err(Error::Config(format!(
                        "flow pool of {} rows cannot hold a test set of {}",
                        pool.len(),
                        cfg.data.test_size
                    )));
                }
                let picks = sample(&mut setup, pool.len(), pool.len()).into_vec();
                let (test_idx, train_idx) = picks.split_at(cfg.data.test_size);
                let take = |idx: &[usize], device| {
                    let mut s = DeviceShard::empty(device, pool.width);
                    for &k in idx {
                        let (x, y) = pool.sample(k);
                        s.push(x, y);
                    }
                    s
                };
                let classes = pool.labels.iter().max().map_or(2, |m| (m + 1).max(2));
                (
                    DataSource::Pool(take(train_idx, 0)),
                    take(test_idx, usize::MAX),
                    classes,
                )
            }
        };
        let mut init = stream(seed, Stream::Init, &[SEED_KEY]);
        let template = TaskModel::new(test.width, &cfg.fl.hidden, classes, &mut init)?;
        let time_model = TimeModel {
            costs: cfg
                .time
                .costs(cfg.fl.local.epochs.max(1), template.params().len()),
            cloud_cpu: cfg.time.cloud_cpu,
            mode: cfg.time.aggregation,
        };
        let max_bw = stations.iter().map(|s| s.bandwidth).fold(0.0, f64::max);
        let max_tx = stations
            .iter()
            .map(|s| s.tx_power)
            .fold(dbm_to_watts(net.device_tx_power_dbm), f64::max);
        let scale = StateScale {
            max_rate: channel.rate(max_bw, max_tx, crate::netmodel::MIN_DISTANCE)?,
            max_cpu: stations
                .iter()
                .map(|s| s.cpu_freq)
                .fold(net.cpu_max, f64::max),
        };
        Ok(Scenario {
            cfg: cfg.clone(),
            seed,
            world: net.grid,
            stations,
            time_model,
            template,
            test,
            traffic: TrafficGen::new(&cfg.traffic, cfg.anticipator.window)?,
            scale,
            source,
            positions: assets.positions.clone(),
        })
    }

    pub fn devices(&self) -> usize {
        self.cfg.network.devices
    }

    pub fn state_len(&self) -> usize {
        MdpState::len_for(self.devices(), self.stations.len())
    }

    fn rng(&self, which: Stream, keys: &[u64]) -> SimRng {
        stream(self.seed, which, keys)
    }

    fn initial_devices(&self, key: u64) -> Vec<Device> {
        let net = &self.cfg.network;
        let mut rng = self.rng(Stream::Setup, &[key]);
        (0..self.devices())
            .map(|id| {
                let (position, heading) = self.world.random_road_point(&mut rng);
                Device {
                    id,
                    position,
                    heading,
                    speed: net.speed_mps(),
                    cpu_freq: rng.gen_range(net.cpu_min..=net.cpu_max),
                    tx_power: dbm_to_watts(net.device_tx_power_dbm),
                    data_size: 0,
                }
            })
            .collect()
    }

    fn pool_size(&self, it: usize, rng: &mut SimRng) -> usize {
        let d = &self.cfg.data;
        match d.pool_schedule {
            super::config::PoolSchedule::Ramp => {
                if self.cfg.iterations <= 1 {
                    d.pool_min
                } else {
                    d.pool_min + (d.pool_max - d.pool_min) * it / (self.cfg.iterations - 1)
                }
            }
            super::config::PoolSchedule::Uniform => rng.gen_range(d.pool_min..=d.pool_max),
        }
    }

    fn shards(&self, key: u64, it: usize) -> Vec<DeviceShard> {
        let mut rng = self.rng(Stream::Data, &[key, it as u64]);
        let n = self.pool_size(it, &mut rng);
        match &self.source {
            DataSource::Synthetic(task) => task.sample_shards(self.devices(), n, &mut rng),
            DataSource::Pool(pool) => {
                let mut shards: Vec<DeviceShard> = (0..self.devices())
                    .map(|u| DeviceShard::empty(u, pool.width))
                    .collect();
                for _ in 0..n {
                    let u = rng.gen_range(0..self.devices());
                    let (x, y) = pool.sample(rng.gen_range(0..pool.len()));
                    shards[u].push(x, y);
                }
                shards
            }
        }
    }

    /// Fresh global model of an episode.
    pub fn initial_model(&self, key: u64) -> Result<ModelParams> {
        let mut rng = self.rng(Stream::Init, &[key]);
        Ok(TaskModel::new(
            self.template.features(),
            &self.cfg.fl.hidden,
            self.template.classes(),
            &mut rng,
        )?
        .params())
    }

    /// Builds the predictors of an MTD-FL run for this seed.
    pub fn build_predictors(&self, assets: &Assets) -> Result<PredictorSet> {
        let a = &self.cfg.anticipator;
        Ok(match a.predictor {
            PredictorKind::Oracle => PredictorSet::Shared(Predictor::Oracle),
            PredictorKind::NoisyOracle => PredictorSet::Shared(Predictor::NoisyOracle {
                fp: a.fp,
                fn_rate: a.fn_rate,
                seed: mix(self.seed, &[Stream::Predictor as u64]),
            }),
            PredictorKind::Constant => PredictorSet::Shared(Predictor::Constant(a.constant)),
            PredictorKind::Learned => {
                if let Some(p) = &assets.predictor {
                    return Ok(PredictorSet::Shared(p.clone()));
                }
                let mut rng = self.rng(Stream::Anticipator, &[SEED_KEY]);
                let logs = gen_synthetic_traffic(
                    &self.traffic,
                    a.train_logs.max(1),
                    a.train_benign,
                    a.train_flows,
                    &mut rng,
                )?;
                if a.per_device {
                    let per = (0..self.devices())
                        .map(|u| {
                            let own = gen_synthetic_traffic(
                                &self.traffic,
                                1,
                                a.train_benign,
                                a.train_flows,
                                &mut rng,
                            )?;
                            let mut r = self.rng(Stream::Anticipator, &[SEED_KEY, u as u64]);
                            train_anticipator(&pooled_windows(&own, a.window), &a.train, &mut r)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    PredictorSet::PerDevice(per)
                } else {
                    let data = pooled_windows(&logs, a.window);
                    PredictorSet::Shared(train_anticipator(&data, &a.train, &mut rng)?)
                }
            }
        })
    }
}

/// Q-networks and reward normalizers carried across episodes.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub policies: PolicySet,
    pub maxima: RunningMax,
    pub cfg: AgentConfig,
}

impl AgentRuntime {
    pub fn new(scn: &Scenario) -> Result<Self> {
        let mut rng = scn.rng(Stream::Init, &[SEED_KEY, 1]);
        Ok(AgentRuntime {
            policies: PolicySet::new(scn.devices(), scn.state_len(), &scn.cfg.agent, &mut rng)?,
            maxima: RunningMax::default(),
            cfg: scn.cfg.agent,
        })
    }
}

/// Per-episode inputs beyond the scenario.
pub struct EpisodeSpec<'a> {
    pub mode: DefenseMode,
    pub phase: Phase,
    pub episode: usize,
    /// Probability of exploiting the Q-values (MTD-FL only).
    pub exploit_prob: f64,
    /// Apply Bellman updates (MTD-FL training only).
    pub learn: bool,
    /// Starting global model; a fresh one when `None`.
    pub start: Option<ModelParams>,
    pub predictors: Option<&'a PredictorSet>,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub records: Vec<MetricsRecord>,
    pub final_model: ModelParams,
    pub cumulative_reward: f64,
    pub td_error: f64,
}

pub fn episode_key(phase: Phase, episode: usize) -> u64 {
    match phase {
        Phase::Train => episode as u64,
        Phase::Eval => EVAL_KEY_BASE + episode as u64,
    }
}

/// Runs one episode. `agent` must be present exactly when the mode uses it.
pub fn run_episode(
    scn: &Scenario,
    spec: &EpisodeSpec<'_>,
    mut agent: Option<&mut AgentRuntime>,
) -> Result<EpisodeOutcome> {
    let cfg = &scn.cfg;
    let mode = spec.mode;
    if mode.uses_agent() != agent.is_some() || mode.uses_agent() != spec.predictors.is_some() {
        return Err(Error::InvalidState(format!(
            "{mode} needs the agent and predictors exactly when it mutates the topology"
        )));
    }
    let n = scn.devices();
    let iterations = cfg.iterations;
    let key = episode_key(spec.phase, spec.episode);
    let attack_kind = if mode.is_attacked() {
        cfg.attack.kind
    } else {
        AttackKind::None
    };
    let plan = if attack_kind == AttackKind::None {
        CompromisePlan::none(spec.episode, iterations)
    } else {
        let mut rng = scn.rng(Stream::Adversary, &[key]);
        CompromisePlan::draw(spec.episode, n, iterations, &cfg.attack, &mut rng)?
    };
    let channel = cfg.network.channel();
    let window = cfg.anticipator.window;
    let mut devices = scn.initial_devices(key);
    let mut mobility = scn.rng(Stream::Mobility, &[key]);
    let mut global = match &spec.start {
        Some(p) => p.clone(),
        None => scn.initial_model(key)?,
    };

    let mut logs: Vec<EventSequence> = Vec::new();
    if mode.uses_agent() {
        let mut rng = scn.rng(Stream::Traffic, &[key]);
        for u in 0..n {
            let mut log = EventSequence::new(u, scn.traffic.width());
            for _ in 0..cfg.traffic.initial_benign {
                log.push(scn.traffic.benign(&mut rng))?;
            }
            logs.push(log);
        }
    }

    let mut records = Vec::with_capacity(iterations);
    let mut prev_topology = vec![true; n];
    let mut pending: Option<(MdpState, Vec<bool>, f64)> = None;
    let mut cumulative = 0.0;
    let mut td_total = 0.0;
    let mut td_count = 0usize;

    for it in 0..iterations {
        let itk = it as u64;
        if let Some(trace) = &scn.positions {
            for (d, p) in devices.iter_mut().zip(&trace[it % trace.len()]) {
                d.position = *p;
            }
        } else if it > 0 {
            devices = step_mobility(
                &scn.world,
                &devices,
                cfg.network.step_seconds,
                &cfg.network.turns,
                &mut mobility,
            )?;
        }
        let snapshot = build_snapshot(it, &devices, &scn.stations, &channel)?;
        let shards = scn.shards(key, it);
        let data_sizes: Vec<usize> = shards.iter().map(DeviceShard::len).collect();
        let attacking: Vec<bool> = (0..n).map(|u| plan.attacks(u, it)).collect();
        let compromised: Vec<usize> = (0..n).filter(|&u| attacking[u]).collect();
        let usable: Vec<bool> = (0..n)
            .map(|u| snapshot.is_covered(u) && data_sizes[u] > 0)
            .collect();

        let mut profile = Vec::new();
        let mut state = None;
        let proposed: Vec<bool> = match mode {
            DefenseMode::Fl | DefenseMode::FlAttack => vec![true; n],
            DefenseMode::RndMtd(k) => {
                let mut rng = scn.rng(Stream::Baseline, &[key, itk]);
                let mut keep = vec![true; n];
                for u in sample(&mut rng, n, k.min(n)) {
                    keep[u] = false;
                }
                keep
            }
            DefenseMode::MtdFl => {
                let rt = agent.as_deref_mut().expect("checked above");
                let predictors = spec.predictors.expect("checked above");
                for (u, log) in logs.iter_mut().enumerate() {
                    let mut rng = scn.rng(Stream::Traffic, &[key, itk, u as u64]);
                    if attacking[u] {
                        log.extend(&scn.traffic.precursors(&mut rng))?;
                    } else {
                        for _ in 0..cfg.traffic.benign_per_iteration {
                            log.push(scn.traffic.benign(&mut rng))?;
                        }
                    }
                }
                profile = anticipate(predictors, &logs, window, &attacking, it)?.probs;
                let s = build_state(&snapshot, &prev_topology, &profile, &scn.scale)?;
                if let Some((prev, actions, reward)) = pending.take() {
                    if spec.learn {
                        let tr = Transition {
                            state: prev,
                            actions,
                            reward,
                            next_state: Some(s.clone()),
                        };
                        td_total += bellman_update(&mut rt.policies, &tr, &rt.cfg)?;
                        td_count += 1;
                    }
                }
                let mut rng = scn.rng(Stream::Agent, &[key, itk]);
                let mut prop = select_topology(&rt.policies, &s, spec.exploit_prob, &mut rng)?;
                if rt.cfg.force_participant {
                    let eligible: Vec<bool> = (0..n)
                        .map(|u| usable[u] && profile[u] < rt.cfg.confidence)
                        .collect();
                    let q = rt.policies.all_q(&s)?;
                    ensure_participant(&mut prop, &eligible, &q);
                }
                state = Some(s);
                prop
            }
        };

        let masked = if mode.uses_agent() {
            enforce_confidence(&proposed, &profile, cfg.agent.confidence)?
        } else {
            proposed.clone()
        };
        let executed: Vec<bool> = (0..n).map(|u| masked[u] && usable[u]).collect();
        let participants: Vec<usize> = (0..n).filter(|&u| executed[u]).collect();

        let train_one = |u: usize| -> Result<Option<Upload>> {
            let mut rng = scn.rng(Stream::LocalTraining, &[key, itk, u as u64]);
            Ok(
                local_train(&scn.template, &global, &shards[u], &cfg.fl.local, &mut rng)?.map(
                    |up| Upload {
                        device: u,
                        params: up.params,
                        samples: shards[u].len(),
                        loss: up.loss,
                        poisoned: false,
                    },
                ),
            )
        };
        let mut uploads: Vec<Upload> = Vec::with_capacity(participants.len());
        for &u in &participants {
            if let Some(up) = train_one(u)? {
                uploads.push(up);
            }
        }
        if attack_kind != AttackKind::None && !uploads.is_empty() {
            let extra: Vec<ModelParams> = match cfg.attack.estimate_pool {
                EstimatePool::Participants => Vec::new(),
                EstimatePool::AllDevices => (0..n)
                    .filter(|&u| usable[u] && !executed[u])
                    .map(train_one)
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .map(|up| up.params)
                    .collect(),
            };
            let honest: Vec<ModelParams> = uploads.iter().map(|u| u.params.clone()).collect();
            let pool: Vec<&ModelParams> = honest.iter().chain(&extra).collect();
            let mut rng = scn.rng(Stream::Adversary, &[key, itk + 1]);
            poison_uploads(&mut uploads, &pool, &plan, &cfg.attack, it, n, &mut rng)?;
        }

        if !uploads.is_empty() {
            let mut groups: Vec<Vec<(&ModelParams, usize)>> = vec![Vec::new(); scn.stations.len()];
            for up in &uploads {
                let i = snapshot.assignment[up.device].expect("participants are covered");
                groups[i].push((&up.params, up.samples));
            }
            global = aggregate_hierarchical(&groups, cfg.fl.weighting)?;
        }
        let model = scn.template.with_params(&global)?;
        let (accuracy, test_loss) = evaluate(&model, &scn.test)?;
        let timing = scn
            .time_model
            .recognition_time(&participants, &data_sizes, &snapshot)?;

        let mut reward = 0.0;
        let mut violations = 0;
        let mut proposed_violations = 0;
        if let Some(rt) = agent.as_deref_mut() {
            let c = rt.cfg.confidence;
            violations = (0..n).filter(|&u| executed[u] && profile[u] >= c).count();
            proposed_violations = (0..n).filter(|&u| proposed[u] && profile[u] >= c).count();
            let raw = uploads
                .iter()
                .map(|up| {
                    let loss = match rt.cfg.reward_loss {
                        RewardLoss::Local => up.loss,
                        RewardLoss::Global => evaluate(&model, &shards[up.device])?.1,
                    };
                    Ok(ParticipantCost {
                        loss,
                        time: timing.t_int_of(up.device).unwrap_or(0.0),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            for c in &raw {
                rt.maxima.observe(c.loss, c.time);
            }
            let costs: Vec<ParticipantCost> = raw.iter().map(|c| rt.maxima.normalize(*c)).collect();
            reward = compute_reward(&costs, &proposed, &profile, &rt.cfg);
            pending = Some((
                state.take().expect("state built above"),
                proposed.clone(),
                reward,
            ));
            for (u, log) in logs.iter_mut().enumerate() {
                if attacking[u] {
                    let mut rng = scn.rng(Stream::Traffic, &[key, itk, u as u64, 1]);
                    log.push(scn.traffic.attack_event(&mut rng))?;
                }
            }
        }
        cumulative += reward;
        records.push(MetricsRecord {
            run_id: format!("{}-s{}", mode.slug(), scn.seed),
            seed: scn.seed,
            mode,
            attack: attack_kind,
            phase: spec.phase,
            episode: spec.episode,
            iteration: it,
            accuracy,
            test_loss,
            excluded_ratio: excluded_ratio(&compromised, &participants),
            participants,
            compromised,
            profile,
            proposed_violations,
            violations,
            reward,
            cumulative_reward: cumulative,
            t_local: timing.t_local,
            t_agg: timing.t_agg,
            mean_t_int: timing.mean_t_int(),
            t_down: timing.t_down,
            t_inf: timing.t_inf,
            t_int: timing.t_int,
        });
        prev_topology = executed;
    }

    if let (Some(rt), Some((s, actions, reward))) = (agent, pending) {
        if spec.learn {
            let tr = Transition {
                state: s,
                actions,
                reward,
                next_state: None,
            };
            td_total += bellman_update(&mut rt.policies, &tr, &rt.cfg)?;
            td_count += 1;
        }
    }
    Ok(EpisodeOutcome {
        records,
        final_model: global,
        cumulative_reward: cumulative,
        td_error: if td_count == 0 {
            0.0
        } else {
            td_total / td_count as f64
        },
    })
}
