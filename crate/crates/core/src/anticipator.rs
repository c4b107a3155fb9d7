//! Traffic-based anticipation of Byzantine devices.
//!
//! Every device keeps a log of security events. A sliding window of the
//! last `L` events is fed to a predictor that estimates the probability
//! that the device's next event is an attack. The per-device probabilities
//! form the anticipation profile used by the defense.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{mix, unit_from_hash};
use crate::tensorkit::{
    Adam, AdamConfig, CellKind, Checkpoint, LossKind, Optimizer, SequenceClassifier,
};
use crate::{Error, Result};

/// Default window length `L`.
pub const DEFAULT_WINDOW: usize = 10;

/// Probability at or above which a window is counted as an attack when
/// scoring a predictor.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub features: Vec<f64>,
    pub attack: bool,
}

/// Chronological event log of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub device: usize,
    width: usize,
    events: Vec<Event>,
}

impl EventSequence {
    pub fn new(device: usize, width: usize) -> Self {
        EventSequence {
            device,
            width,
            events: Vec::new(),
        }
    }

    pub fn from_events(device: usize, width: usize, events: Vec<Event>) -> Result<Self> {
        let mut s = EventSequence::new(device, width);
        s.extend(&events)?;
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn push(&mut self, e: Event) -> Result<()> {
        if e.features.len() != self.width {
            return Err(Error::Shape(format!(
                "event width {} does not match log width {}",
                e.features.len(),
                self.width
            )));
        }
        self.events.push(e);
        Ok(())
    }

    pub fn extend(&mut self, events: &[Event]) -> Result<()> {
        if let Some(e) = events.iter().find(|e| e.features.len() != self.width) {
            return Err(Error::Shape(format!(
                "event width {} does not match log width {}",
                e.features.len(),
                self.width
            )));
        }
        self.events.extend_from_slice(events);
        Ok(())
    }

    /// The last `window` events, if there are that many.
    pub fn tail(&self, window: usize) -> Option<&[Event]> {
        (self.events.len() >= window).then(|| &self.events[self.events.len() - window..])
    }
}

/// One training row: `L` consecutive events and the label of the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub device: usize,
    /// Index of the first event of the window in its log.
    pub start: usize,
    pub x: Vec<Vec<f64>>,
    pub y: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowedDataset {
    pub window: usize,
    pub rows: Vec<WindowRow>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.y).count()
    }

    /// Share of attack-labeled rows (0 for an empty set).
    pub fn prior(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.rows.len() as f64
        }
    }

    pub fn merge(&mut self, other: WindowedDataset) -> Result<()> {
        if !self.rows.is_empty() && other.window != self.window {
            return Err(Error::Shape(format!(
                "cannot merge windows of length {} and {}",
                self.window, other.window
            )));
        }
        self.window = other.window;
        self.rows.extend(other.rows);
        Ok(())
    }
}

/// Sliding windows over a log: row `k` holds events `k..k+L` and the label
/// of event `k+L`, giving `t − L` rows for a log of length `t`.
pub fn build_windows(log: &EventSequence, window: usize) -> Result<WindowedDataset> {
    let t = log.len();
    if window == 0 || t <= window {
        return Err(Error::InsufficientHistory { window, len: t });
    }
    let rows = (0..t - window)
        .map(|k| WindowRow {
            device: log.device,
            start: k,
            x: log.events[k..k + window]
                .iter()
                .map(|e| e.features.clone())
                .collect(),
            y: log.events[k + window].attack,
        })
        .collect();
    Ok(WindowedDataset { window, rows })
}

/// Windows from several logs pooled together. Logs that are too short are
/// skipped.
pub fn pooled_windows(logs: &[EventSequence], window: usize) -> WindowedDataset {
    let mut ds = WindowedDataset {
        window,
        rows: Vec::new(),
    };
    for log in logs {
        if let Ok(w) = build_windows(log, window) {
            ds.rows.extend(w.rows);
        }
    }
    ds
}

/// Maps a window of events to an attack probability.
///
/// `truth` is the ground-truth attack bit of the window. Learned predictors
/// ignore it; the oracle variants exist to study the defense under a known
/// anticipation quality.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Learned {
        model: SequenceClassifier,
        /// Attack share of the training set, used when a log is too short.
        prior: f64,
    },
    Oracle,
    /// The oracle bit flipped with false-positive rate `fp` and
    /// false-negative rate `fn_rate`. Flips are a deterministic hash of
    /// `seed` and the window contents.
    NoisyOracle {
        fp: f64,
        fn_rate: f64,
        seed: u64,
    },
    Constant(f64),
}

impl Predictor {
    pub fn name(&self) -> String {
        match self {
            Predictor::Learned { model, .. } => {
                format!("{}-{}", model.kind(), model.hidden_width())
            }
            Predictor::Oracle => "oracle".into(),
            Predictor::NoisyOracle { fp, fn_rate, .. } => format!("noisy-oracle({fp},{fn_rate})"),
            Predictor::Constant(p) => format!("constant({p})"),
        }
    }

    /// Probability used when a device has fewer than `L` events.
    pub fn fallback(&self) -> f64 {
        match self {
            Predictor::Learned { prior, .. } => *prior,
            Predictor::Constant(p) => *p,
            _ => 0.0,
        }
    }

    pub fn probability(&self, window: &[Vec<f64>], truth: bool) -> Result<f64> {
        Ok(match self {
            Predictor::Learned { model, .. } => model.predict_proba(window)?[1],
            Predictor::Oracle => f64::from(u8::from(truth)),
            Predictor::NoisyOracle { fp, fn_rate, seed } => {
                let u = unit_from_hash(window_hash(*seed, window));
                let flip = if truth { u < *fn_rate } else { u < *fp };
                f64::from(u8::from(truth != flip))
            }
            Predictor::Constant(p) => *p,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Predictor::Learned { model, prior } => {
                let mut ck = model.to_checkpoint();
                ck.meta.insert("prior".into(), format!("{prior:?}"));
                Ok(ck)
            }
            _ => Err(Error::Checkpoint(format!(
                "{} predictors have no parameters to save",
                self.name()
            ))),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = SequenceClassifier::from_checkpoint(ck)?;
        let prior = ck
            .meta
            .get("prior")
            .map(|p| p.parse::<f64>())
            .transpose()
            .map_err(|e| Error::Checkpoint(format!("prior: {e}")))?
            .unwrap_or(0.0);
        Ok(Predictor::Learned { model, prior })
    }
}

fn window_hash(seed: u64, window: &[Vec<f64>]) -> u64 {
    let bits: Vec<u64> = window.iter().flatten().map(|v| v.to_bits()).collect();
    mix(seed, &bits)
}

/// Per-device probabilities `p_u` for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipationProfile {
    pub iteration: usize,
    pub probs: Vec<f64>,
}

/// Either one predictor shared by all devices or one per device.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSet {
    Shared(Predictor),
    PerDevice(Vec<Predictor>),
}

impl PredictorSet {
    pub fn get(&self, device: usize) -> Result<&Predictor> {
        match self {
            PredictorSet::Shared(p) => Ok(p),
            PredictorSet::PerDevice(v) => v
                .get(device)
                .ok_or_else(|| Error::Shape(format!("no predictor for device {device}"))),
        }
    }
}

/// Scores the last `window` events of every log. `truths[u]` is the ground
/// truth handed to oracle predictors.
pub fn anticipate(
    predictors: &PredictorSet,
    logs: &[EventSequence],
    window: usize,
    truths: &[bool],
    iteration: usize,
) -> Result<AnticipationProfile> {
    if truths.len() != logs.len() {
        return Err(Error::Shape(format!(
            "{} truth bits for {} logs",
            truths.len(),
            logs.len()
        )));
    }
    let probs = logs
        .iter()
        .zip(truths)
        .map(|(log, &truth)| {
            let pred = predictors.get(log.device)?;
            match log.tail(window) {
                Some(events) if window > 0 => {
                    let x: Vec<Vec<f64>> = events.iter().map(|e| e.features.clone()).collect();
                    pred.probability(&x, truth)
                }
                _ => Ok(pred.fallback()),
            }
            .map(|p| p.clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AnticipationProfile { iteration, probs })
}

/// Accuracy, false-positive rate and false-negative rate at the 0.5 threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnticipatorScore {
    pub accuracy: f64,
    pub fp: f64,
    pub fn_rate: f64,
}

pub fn evaluate_anticipator(
    predictor: &Predictor,
    test: &WindowedDataset,
) -> Result<AnticipatorScore> {
    if test.is_empty() {
        return Err(Error::Shape("evaluation set is empty".into()));
    }
    let (mut correct, mut fp, mut fneg, mut pos) = (0usize, 0usize, 0usize, 0usize);
    for row in &test.rows {
        let said_attack = predictor.probability(&row.x, row.y)? >= DECISION_THRESHOLD;
        if row.y {
            pos += 1;
        }
        match (said_attack, row.y) {
            (true, true) | (false, false) => correct += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    let neg = test.len() - pos;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(AnticipatorScore {
        accuracy: correct as f64 / test.len() as f64,
        fp: ratio(fp, neg),
        fn_rate: ratio(fneg, pos),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnticipatorTrainConfig {
    pub arch: CellKind,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    /// Oversample attack rows to match benign rows in every epoch.
    pub balance: bool,
}

impl Default for AnticipatorTrainConfig {
    fn default() -> Self {
        AnticipatorTrainConfig {
            arch: CellKind::Gru,
            hidden: 8,
            epochs: 30,
            batch_size: 16,
            loss: LossKind::Mse,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            balance: true,
        }
    }
}

/// Trains a recurrent predictor with Adam on mini-batches of windows.
pub fn train_anticipator<R: Rng + ?Sized>(
    dataset: &WindowedDataset,
    cfg: &AnticipatorTrainConfig,
    rng: &mut R,
) -> Result<Predictor> {
    let first = dataset
        .rows
        .first()
        .ok_or_else(|| Error::Training("anticipator dataset is empty".into()))?;
    let width = first
        .x
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Training("windows are empty".into()))?;
    let pos: Vec<usize> = (0..dataset.len()).filter(|&k| dataset.rows[k].y).collect();
    let neg: Vec<usize> = (0..dataset.len()).filter(|&k| !dataset.rows[k].y).collect();
    if pos.is_empty() || neg.is_empty() {
        log::warn!(
            "anticipator training set has a single class ({} rows); calibration is untested",
            dataset.len()
        );
    }
    let mut model = SequenceClassifier::random(cfg.arch, width, cfg.hidden, 2, cfg.loss, rng)?;
    let mut params = model.params();
    let mut grads = vec![0.0; params.len()];
    let mut adam = Adam::new(cfg.adam);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = if cfg.balance && !pos.is_empty() && !neg.is_empty() {
            let mut o = neg.clone();
            let reps = neg.len().div_ceil(pos.len());
            let mut extra: Vec<usize> =
                pos.iter().copied().cycle().take(reps * pos.len()).collect();
            extra.shuffle(rng);
            extra.truncate(neg.len().max(pos.len()));
            o.extend(extra);
            o
        } else {
            (0..dataset.len()).collect()
        };
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &k in batch {
                let row = &dataset.rows[k];
                model.accumulate_grad(&row.x, usize::from(row.y), &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grads)?;
            model.set_params(&params)?;
        }
    }
    Ok(Predictor::Learned {
        model,
        prior: dataset.prior(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn log_of(labels: &[bool]) -> EventSequence {
        let events = labels
            .iter()
            .enumerate()
            .map(|(k, &a)| Event {
                features: vec![k as f64],
                attack: a,
            })
            .collect();
        EventSequence::from_events(0, 1, events).unwrap()
    }

    #[test]
    fn windows_expand_as_expected() {
        let log = log_of(&[false, false, true, false, true]);
        let ds = build_windows(&log, 2).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rows[0].x, vec![vec![0.0], vec![1.0]]);
        assert!(ds.rows[0].y);
        assert_eq!(ds.rows[2].x, vec![vec![2.0], vec![3.0]]);
        assert!(ds.rows[2].y);
        assert_eq!(build_windows(&log_of(&[false; 3]), 2).unwrap().len(), 1);
        assert!(matches!(
            build_windows(&log_of(&[false; 2]), 2),
            Err(Error::InsufficientHistory { window: 2, len: 2 })
        ));
    }

    #[test]
    fn injected_flow_labels_final_row() {
        let mut labels = vec![false; 50];
        labels.extend([false; 10]);
        labels.push(true);
        let ds = build_windows(&log_of(&labels), 10).unwrap();
        assert!(ds.rows.last().unwrap().y);
        assert_eq!(ds.positives(), 1);
    }

    #[test]
    fn profile_examples() {
        let logs: Vec<EventSequence> = (0..4)
            .map(|d| {
                let mut l = log_of(&[false; 12]);
                l.device = d;
                l
            })
            .collect();
        let truths = [false, false, true, false];
        let half = anticipate(
            &PredictorSet::Shared(Predictor::Constant(0.5)),
            &logs,
            10,
            &truths,
            0,
        )
        .unwrap();
        assert_eq!(half.probs, vec![0.5; 4]);
        let oracle = anticipate(
            &PredictorSet::Shared(Predictor::Oracle),
            &logs,
            10,
            &truths,
            3,
        )
        .unwrap();
        assert_eq!(oracle.probs, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(oracle.iteration, 3);
        let short = anticipate(
            &PredictorSet::Shared(Predictor::Oracle),
            &logs,
            20,
            &truths,
            0,
        )
        .unwrap();
        assert_eq!(short.probs.len(), 4);
    }

    #[test]
    fn zero_head_learned_predictor_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model =
            SequenceClassifier::random(CellKind::Gru, 1, 3, 2, LossKind::Mse, &mut rng).unwrap();
        let mut p = model.params();
        let n = p.len();
        // Head parameters sit at the end of the flat vector.
        p[n - (3 * 2 + 2)..].iter_mut().for_each(|v| *v = 0.0);
        model.set_params(&p).unwrap();
        let pred = Predictor::Learned { model, prior: 0.1 };
        let logs = vec![log_of(&[false; 11])];
        let prof = anticipate(&PredictorSet::Shared(pred), &logs, 10, &[false], 0).unwrap();
        assert!((prof.probs[0] - 0.5).abs() < 1e-15);
    }

    fn balanced(n: usize) -> WindowedDataset {
        WindowedDataset {
            window: 1,
            rows: (0..n)
                .map(|k| WindowRow {
                    device: 0,
                    start: k,
                    x: vec![vec![k as f64]],
                    y: k % 2 == 0,
                })
                .collect(),
        }
    }

    #[test]
    fn scoring_examples() {
        let ds = balanced(10);
        let perfect = evaluate_anticipator(&Predictor::Oracle, &ds).unwrap();
        assert_eq!(
            (perfect.accuracy, perfect.fp, perfect.fn_rate),
            (1.0, 0.0, 0.0)
        );
        let benign = evaluate_anticipator(&Predictor::Constant(0.0), &ds).unwrap();
        assert_eq!(
            (benign.accuracy, benign.fp, benign.fn_rate),
            (0.5, 0.0, 1.0)
        );
        let attack = evaluate_anticipator(&Predictor::Constant(1.0), &ds).unwrap();
        assert_eq!(
            (attack.accuracy, attack.fp, attack.fn_rate),
            (0.5, 1.0, 0.0)
        );
        assert!(evaluate_anticipator(&Predictor::Oracle, &WindowedDataset::default()).is_err());
    }

    #[test]
    fn noisy_oracle_rates() {
        let ds = balanced(20_000);
        let pred = Predictor::NoisyOracle {
            fp: 0.24,
            fn_rate: 0.27,
            seed: 7,
        };
        let s = evaluate_anticipator(&pred, &ds).unwrap();
        assert!((s.fp - 0.24).abs() < 0.02, "fp {}", s.fp);
        assert!((s.fn_rate - 0.27).abs() < 0.02, "fn {}", s.fn_rate);
        let again = evaluate_anticipator(&pred, &ds).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn gru_learns_copy_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = (0..200)
            .map(|k| {
                let y = rng.gen_bool(0.5);
                let mut x: Vec<Vec<f64>> = (0..4)
                    .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                    .collect();
                x[3][0] = if y { 1.0 } else { -1.0 };
                WindowRow {
                    device: 0,
                    start: k,
                    x,
                    y,
                }
            })
            .collect();
        let ds = WindowedDataset { window: 4, rows };
        let cfg = AnticipatorTrainConfig {
            epochs: 50,
            ..AnticipatorTrainConfig::default()
        };
        let pred = train_anticipator(&ds, &cfg, &mut rng).unwrap();
        let s = evaluate_anticipator(&pred, &ds).unwrap();
        assert!(s.accuracy >= 0.95, "accuracy {}", s.accuracy);
        let ck = pred.to_checkpoint().unwrap();
        assert_eq!(Predictor::from_checkpoint(&ck).unwrap(), pred);
    }
}
