//! Topology-mutation agent.
//!
//! Every device owns a small Q-network that scores "participate" against
//! "abstain" from the shared MDP state. The joint proposal is masked by the
//! confidence constraint before it executes, while learning always sees the
//! proposal itself so that violations are punished through a zero reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::NetworkSnapshot;
use crate::tensorkit::{Activation, Adam, AdamConfig, Checkpoint, DenseNet, Optimizer};
use crate::{Error, Result};

/// Output head indices.
pub const PARTICIPATE: usize = 0;
pub const ABSTAIN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QHead {
    /// Two linear Q outputs.
    #[default]
    Linear,
    /// Softmax over the two outputs.
    Softmax,
}

/// Which loss stands for `F_u` in the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardLoss {
    /// The device's loss at the end of local training.
    #[default]
    Local,
    /// The new global model's loss on the device's shard.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// `γ`.
    pub discount: f64,
    /// Exploitation probability in the first episode.
    pub exploit_start: f64,
    /// Exploitation probability in the last episode.
    pub exploit_end: f64,
    /// Weight of the loss term.
    pub alpha: f64,
    /// Weight of the time term.
    pub beta: f64,
    /// `C_H`.
    pub confidence: f64,
    pub hidden: usize,
    pub head: QHead,
    pub adam: AdamConfig,
    /// Reward when the objective sum is (numerically) zero.
    pub reward_cap: f64,
    /// Add the eligible device with the best margin when a proposal would
    /// leave the round empty.
    pub force_participant: bool,
    /// Restrict the next-state max to abstaining for devices at or above `C_H`.
    pub mask_next_max: bool,
    pub reward_loss: RewardLoss,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            discount: 0.1,
            exploit_start: 0.1,
            exploit_end: 0.98,
            alpha: 1.0,
            beta: 1.0,
            confidence: 0.75,
            hidden: 16,
            head: QHead::Linear,
            adam: AdamConfig::default(),
            reward_cap: 1e9,
            force_participant: true,
            mask_next_max: false,
            reward_loss: RewardLoss::Local,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(0.0..1.0).contains(&self.discount)
            || !unit(self.exploit_start)
            || !unit(self.exploit_end)
            || !(self.confidence > 0.0 && self.confidence <= 1.0)
            || self.hidden == 0
            || !(self.alpha >= 0.0 && self.beta >= 0.0)
        {
            return Err(Error::Config(format!("invalid agent config: {self:?}")));
        }
        Ok(())
    }
}

/// Normalizers for the rate and CPU blocks of the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateScale {
    pub max_rate: f64,
    pub max_cpu: f64,
}

/// `[rates (N·M) ‖ station CPU (M) ‖ device CPU (N) ‖ topology (N) ‖ profile (N)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub features: Vec<f64>,
    pub n_devices: usize,
    pub n_stations: usize,
}

impl MdpState {
    pub fn len_for(n: usize, m: usize) -> usize {
        n * m + m + 3 * n
    }

    pub fn profile(&self) -> &[f64] {
        &self.features[self.features.len() - self.n_devices..]
    }
}

pub fn build_state(
    snapshot: &NetworkSnapshot,
    topology: &[bool],
    profile: &[f64],
    scale: &StateScale,
) -> Result<MdpState> {
    let n = snapshot.num_devices();
    let m = snapshot.num_stations();
    if topology.len() != n || profile.len() != n || snapshot.dev_cpu.len() != n {
        return Err(Error::Shape(format!(
            "state for {n} devices got topology {} and profile {}",
            topology.len(),
            profile.len()
        )));
    }
    let norm = |v: f64, max: f64| {
        if max > 0.0 {
            (v / max).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    let mut f = Vec::with_capacity(MdpState::len_for(n, m));
    for row in &snapshot.rate_matrix {
        if row.len() != m {
            return Err(Error::Shape(
                "rate matrix row width differs from station count".into(),
            ));
        }
        f.extend(row.iter().map(|&r| norm(r, scale.max_rate)));
    }
    f.extend(snapshot.bs_cpu.iter().map(|&c| norm(c, scale.max_cpu)));
    f.extend(snapshot.dev_cpu.iter().map(|&c| norm(c, scale.max_cpu)));
    f.extend(topology.iter().map(|&b| f64::from(u8::from(b))));
    f.extend(profile.iter().map(|&p| p.clamp(0.0, 1.0)));
    Ok(MdpState {
        features: f,
        n_devices: n,
        n_stations: m,
    })
}

/// Clears every bit whose device has `p ≥ C_H`.
pub fn enforce_confidence(
    proposed: &[bool],
    profile: &[f64],
    confidence: f64,
) -> Result<Vec<bool>> {
    if proposed.len() != profile.len() {
        return Err(Error::Shape(format!(
            "topology of {} bits for a profile of {}",
            proposed.len(),
            profile.len()
        )));
    }
    Ok(proposed
        .iter()
        .zip(profile)
        .map(|(&x, &p)| x && p < confidence)
        .collect())
}

/// True when a participating device has `p ≥ C_H`.
pub fn violates_confidence(topology: &[bool], profile: &[f64], confidence: f64) -> bool {
    topology
        .iter()
        .zip(profile)
        .any(|(&x, &p)| x && p >= confidence)
}

/// Objective terms of one participant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipantCost {
    pub loss: f64,
    pub time: f64,
}

/// Zero when the proposal violates the constraint, otherwise the inverse of
/// `Σ (α F_u + β T_u)` over the executed participants. A vanishing sum
/// yields `reward_cap`.
pub fn compute_reward(
    costs: &[ParticipantCost],
    proposed: &[bool],
    profile: &[f64],
    cfg: &AgentConfig,
) -> f64 {
    if violates_confidence(proposed, profile, cfg.confidence) {
        return 0.0;
    }
    let denom: f64 = costs
        .iter()
        .map(|c| cfg.alpha * c.loss + cfg.beta * c.time)
        .sum();
    if denom < 1e-9 {
        cfg.reward_cap
    } else {
        1.0 / denom
    }
}

/// Linear exploitation schedule from `exploit_start` (first episode) to
/// `exploit_end` (last episode).
pub fn epsilon_at(episode: usize, episodes: usize, cfg: &AgentConfig) -> f64 {
    if episodes <= 1 {
        return cfg.exploit_end;
    }
    let t = (episode.min(episodes - 1)) as f64 / (episodes - 1) as f64;
    cfg.exploit_start + t * (cfg.exploit_end - cfg.exploit_start)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: MdpState,
    /// Proposed (pre-mask) topology.
    pub actions: Vec<bool>,
    pub reward: f64,
    /// `None` for a terminal transition.
    pub next_state: Option<MdpState>,
}

/// One Q-network per device plus its optimizer state.
#[derive(Debug, Clone)]
pub struct PolicySet {
    nets: Vec<DenseNet>,
    opts: Vec<Adam>,
    state_len: usize,
}

impl PolicySet {
    pub fn new<R: Rng + ?Sized>(
        n_devices: usize,
        state_len: usize,
        cfg: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let out_act = match cfg.head {
            QHead::Linear => Activation::Identity,
            QHead::Softmax => Activation::Softmax,
        };
        let nets = (0..n_devices)
            .map(|_| {
                DenseNet::random(
                    &[state_len, cfg.hidden, 2],
                    &[Activation::Softmax, out_act],
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicySet {
            opts: (0..n_devices).map(|_| Adam::new(cfg.adam)).collect(),
            nets,
            state_len,
        })
    }

    pub fn from_nets(nets: Vec<DenseNet>, cfg: &AgentConfig) -> Result<Self> {
        let state_len = nets.first().map_or(0, DenseNet::input_width);
        if nets
            .iter()
            .any(|n| n.input_width() != state_len || n.output_width() != 2)
        {
            return Err(Error::Shape("policy networks disagree on shape".into()));
        }
        Ok(PolicySet {
            opts: nets.iter().map(|_| Adam::new(cfg.adam)).collect(),
            nets,
            state_len,
        })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    pub fn nets(&self) -> &[DenseNet] {
        &self.nets
    }

    pub fn q_values(&self, device: usize, state: &MdpState) -> Result<[f64; 2]> {
        let q = self.nets[device].forward_one(&state.features)?;
        Ok([q[PARTICIPATE], q[ABSTAIN]])
    }

    pub fn all_q(&self, state: &MdpState) -> Result<Vec<[f64; 2]>> {
        (0..self.nets.len())
            .map(|u| self.q_values(u, state))
            .collect()
    }

    pub fn to_checkpoints(&self) -> Vec<Checkpoint> {
        self.nets
            .iter()
            .map(|n| n.to_checkpoint("policy"))
            .collect()
    }
}

/// Per device: with probability `exploit_prob` the argmax head (ties
/// participate), otherwise a fair coin.
pub fn select_topology<R: Rng + ?Sized>(
    policies: &PolicySet,
    state: &MdpState,
    exploit_prob: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let q = policies.all_q(state)?;
    Ok(q.iter()
        .map(|&[qp, qa]| {
            if rng.gen::<f64>() < exploit_prob {
                qp >= qa
            } else {
                rng.gen::<bool>()
            }
        })
        .collect())
}

/// Adds the eligible device with the largest `Q(participate) − Q(abstain)`
/// when no eligible device is proposed. Returns whether a bit was set.
pub fn ensure_participant(proposed: &mut [bool], eligible: &[bool], q: &[[f64; 2]]) -> bool {
    if proposed.iter().zip(eligible).any(|(&x, &e)| x && e) {
        return false;
    }
    let best = (0..proposed.len())
        .filter(|&u| eligible[u])
        .max_by(|&a, &b| {
            let ma = q[a][PARTICIPATE] - q[a][ABSTAIN];
            let mb = q[b][PARTICIPATE] - q[b][ABSTAIN];
            ma.total_cmp(&mb).then(b.cmp(&a))
        });
    match best {
        Some(u) => {
            proposed[u] = true;
            true
        }
        None => false,
    }
}

/// Bellman target `r + γ max_a Q(s', a)`, or `r` when terminal.
pub fn bellman_target(reward: f64, next_max: Option<f64>, discount: f64) -> Result<f64> {
    let t = reward + next_max.map_or(0.0, |q| discount * q);
    if !t.is_finite() {
        return Err(Error::Training(format!("non-finite Bellman target {t}")));
    }
    Ok(t)
}

/// One squared-error gradient step per device on the head it took.
/// Returns the mean squared TD error before the update.
pub fn bellman_update(policies: &mut PolicySet, tr: &Transition, cfg: &AgentConfig) -> Result<f64> {
    if tr.actions.len() != policies.len() {
        return Err(Error::Shape(format!(
            "{} actions for {} policies",
            tr.actions.len(),
            policies.len()
        )));
    }
    let mut total = 0.0;
    for u in 0..policies.len() {
        let next_max = match &tr.next_state {
            None => None,
            Some(next) => {
                let [qp, qa] = policies.q_values(u, next)?;
                let blocked = cfg.mask_next_max && next.profile()[u] >= cfg.confidence;
                Some(if blocked { qa } else { qp.max(qa) })
            }
        };
        let target = bellman_target(tr.reward, next_max, cfg.discount)?;
        let head = if tr.actions[u] { PARTICIPATE } else { ABSTAIN };
        let net = &policies.nets[u];
        let trace = net.trace(&tr.state.features)?;
        let q = trace.output()[head];
        let err = q - target;
        total += err * err;
        let mut dout = [0.0; 2];
        dout[head] = 2.0 * err;
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&trace, &dout, &mut grads);
        let mut params = net.params();
        policies.opts[u].step(&mut params, &grads)?;
        policies.nets[u].set_params(&params)?;
    }
    Ok(total / policies.len().max(1) as f64)
}

/// Running maxima used to scale losses and times into comparable units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMax {
    pub loss: f64,
    pub time: f64,
}

impl RunningMax {
    pub fn observe(&mut self, loss: f64, time: f64) {
        self.loss = self.loss.max(loss);
        self.time = self.time.max(time);
    }

    pub fn normalize(&self, c: ParticipantCost) -> ParticipantCost {
        let scale = |v: f64, m: f64| if m > 0.0 { v / m } else { v };
        ParticipantCost {
            loss: scale(c.loss, self.loss),
            time: scale(c.time, self.time),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snapshot(n: usize, m: usize) -> NetworkSnapshot {
        NetworkSnapshot {
            iteration: 0,
            positions: vec![Point::new(0.0, 0.0); n],
            assignment: vec![None; n],
            rate_matrix: vec![vec![0.0; m]; n],
            downlink_matrix: vec![vec![0.0; m]; n],
            bs_cpu: vec![0.0; m],
            dev_cpu: vec![0.0; n],
            backhaul: vec![0.0; m],
        }
    }

    const SCALE: StateScale = StateScale {
        max_rate: 1e9,
        max_cpu: 4e9,
    };

    #[test]
    fn state_layout() {
        let s = snapshot(2, 1);
        let st = build_state(&s, &[true, false], &[0.2, 0.9], &SCALE).unwrap();
        assert_eq!(st.features.len(), 9);
        assert_eq!(MdpState::len_for(10, 2), 52);
        assert_eq!(&st.features[..5], &[0.0; 5]);
        assert_eq!(&st.features[5..], &[1.0, 0.0, 0.2, 0.9]);
        assert_eq!(st.profile(), &[0.2, 0.9]);
        let again = build_state(&s, &[true, false], &[0.2, 0.9], &SCALE).unwrap();
        assert_eq!(st, again);
        assert!(build_state(&s, &[true], &[0.2, 0.9], &SCALE).is_err());
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(
            enforce_confidence(&[true, true], &[0.8, 0.3], 0.75).unwrap(),
            vec![false, true]
        );
        assert_eq!(
            enforce_confidence(&[true], &[0.75], 0.75).unwrap(),
            vec![false]
        );
        assert_eq!(
            enforce_confidence(&[true, false], &[0.1, 0.2], 0.75).unwrap(),
            vec![true, false]
        );
    }

    #[test]
    fn reward_examples() {
        let cfg = AgentConfig::default();
        let c = |loss, time| ParticipantCost { loss, time };
        assert_eq!(
            compute_reward(&[c(1.0, 1.0)], &[true, true], &[0.8, 0.1], &cfg),
            0.0
        );
        let r = compute_reward(
            &[c(1.5, 2.0), c(2.5, 4.0)],
            &[true, true],
            &[0.1, 0.1],
            &cfg,
        );
        assert!((r - 0.1).abs() < 1e-15);
        assert_eq!(
            compute_reward(&[], &[false, false], &[0.1, 0.1], &cfg),
            cfg.reward_cap
        );
    }

    #[test]
    fn schedule_examples() {
        let cfg = AgentConfig::default();
        assert!((epsilon_at(0, 101, &cfg) - 0.1).abs() < 1e-15);
        assert!((epsilon_at(100, 101, &cfg) - 0.98).abs() < 1e-15);
        assert!((epsilon_at(50, 101, &cfg) - 0.54).abs() < 1e-12);
        assert_eq!(epsilon_at(0, 1, &cfg), 0.98);
    }

    #[test]
    fn target_examples() {
        assert!((bellman_target(0.1, Some(0.5), 0.1).unwrap() - 0.15).abs() < 1e-15);
        assert_eq!(bellman_target(0.2, None, 0.1).unwrap(), 0.2);
        assert_eq!(bellman_target(0.3, Some(7.0), 0.0).unwrap(), 0.3);
        assert!(bellman_target(f64::NAN, None, 0.1).is_err());
    }

    fn fixed_policies(qp: f64, qa: f64, n: usize, len: usize) -> PolicySet {
        let cfg = AgentConfig {
            hidden: 2,
            ..AgentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut set = PolicySet::new(n, len, &cfg, &mut rng).unwrap();
        for net in &mut set.nets {
            let layers = net.layers_mut();
            layers[1].weights.iter_mut().for_each(|w| *w = 0.0);
            layers[1].bias = vec![qp, qa];
        }
        set
    }

    #[test]
    fn selection_examples() {
        let st = MdpState {
            features: vec![0.3; 4],
            n_devices: 3,
            n_stations: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = fixed_policies(0.7, 0.2, 3, 4);
        assert_eq!(
            select_topology(&p, &st, 1.0, &mut rng).unwrap(),
            vec![true; 3]
        );
        let tie = fixed_policies(0.4, 0.4, 3, 4);
        assert_eq!(
            select_topology(&tie, &st, 1.0, &mut rng).unwrap(),
            vec![true; 3]
        );
        let mut ones = 0usize;
        for _ in 0..10_000 {
            ones += select_topology(&p, &st, 0.0, &mut rng).unwrap()[0] as usize;
        }
        assert!((ones as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    #[test]
    fn forcing_picks_best_margin() {
        let q = [[0.1, 0.5], [0.4, 0.45], [0.9, 0.0]];
        let mut prop = vec![false, false, true];
        // Device 2 is proposed but ineligible, so one eligible device is added.
        assert!(ensure_participant(&mut prop, &[true, true, false], &q));
        assert_eq!(prop, vec![false, true, true]);
        let mut none = vec![false; 3];
        assert!(!ensure_participant(&mut none, &[false; 3], &q));
    }

    #[test]
    fn update_moves_taken_head_toward_target() {
        let cfg = AgentConfig {
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            ..AgentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = PolicySet::new(2, 3, &cfg, &mut rng).unwrap();
        let st = MdpState {
            features: vec![0.1, 0.5, 0.9],
            n_devices: 1,
            n_stations: 0,
        };
        let tr = Transition {
            state: st.clone(),
            actions: vec![true, false],
            reward: 2.0,
            next_state: None,
        };
        let before = p.all_q(&st).unwrap();
        for _ in 0..300 {
            bellman_update(&mut p, &tr, &cfg).unwrap();
        }
        let after = p.all_q(&st).unwrap();
        assert!((after[0][PARTICIPATE] - 2.0).abs() < 0.05);
        assert!((after[1][ABSTAIN] - 2.0).abs() < 0.05);
        assert!((after[0][ABSTAIN] - before[0][ABSTAIN]).abs() < 1.0);
    }

    #[test]
    fn policy_gradients_match_finite_differences() {
        let cfg = AgentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = PolicySet::new(1, 9, &cfg, &mut rng).unwrap();
        let net = p.nets()[0].clone();
        let x: Vec<f64> = (0..9).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let err = crate::tensorkit::grad_check(&net.params(), |v| {
            let mut n = net.clone();
            n.set_params(v).unwrap();
            let tr = n.trace(&x).unwrap();
            let q = tr.output()[PARTICIPATE];
            let e = q - 0.3;
            let mut g = vec![0.0; n.param_count()];
            n.backward(&tr, &[2.0 * e, 0.0], &mut g);
            (e * e, g)
        });
        assert!(err <= 1e-4, "relative error {err}");
    }
}
