//! Anticipation and topology-agent properties.

use mtdfl::anticipator::{
    anticipate, build_windows, evaluate_anticipator, Event, EventSequence, Predictor, PredictorSet,
    WindowRow, WindowedDataset,
};
use mtdfl::mtdagent::{
    compute_reward, enforce_confidence, select_topology, AgentConfig, MdpState, ParticipantCost,
    PolicySet,
};
use mtdfl::tensorkit::{CellKind, LossKind, SequenceClassifier};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_log(seed: u64, len: usize, width: usize) -> EventSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..len)
        .map(|_| Event {
            features: (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            attack: rng.gen_bool(0.3),
        })
        .collect();
    EventSequence::from_events(0, width, events).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn window_count(seed in 0u64..10_000, window in 1usize..12, extra in 1usize..40) {
        let log = random_log(seed, window + extra, 2);
        let ds = build_windows(&log, window).unwrap();
        prop_assert_eq!(ds.len(), extra);
    }

    #[test]
    fn windowing_ignores_feature_order(seed in 0u64..10_000, window in 1usize..6, extra in 1usize..10, rot in 1usize..4) {
        let log = random_log(seed, window + extra, 4);
        let permuted: Vec<Event> = log
            .events()
            .iter()
            .map(|e| {
                let mut f = e.features.clone();
                f.rotate_left(rot);
                Event { features: f, attack: e.attack }
            })
            .collect();
        let plog = EventSequence::from_events(0, 4, permuted).unwrap();
        let a = build_windows(&log, window).unwrap();
        let b = build_windows(&plog, window).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            prop_assert_eq!(ra.y, rb.y);
            for (ea, eb) in ra.x.iter().zip(&rb.x) {
                let mut r = ea.clone();
                r.rotate_left(rot);
                prop_assert_eq!(&r, eb);
            }
        }
    }

    #[test]
    fn probabilities_are_distributions(seed in 0u64..1000, len in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in [CellKind::Gru, CellKind::Lstm] {
            let model = SequenceClassifier::random(kind, 3, 5, 2, LossKind::Mse, &mut rng).unwrap();
            let seq: Vec<Vec<f64>> = (0..len).map(|_| (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let p = model.predict_proba(&seq).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn enforcement_is_idempotent_and_only_clears(
        bits in prop::collection::vec(any::<bool>(), 1..16),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile: Vec<f64> = bits.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        let once = enforce_confidence(&bits, &profile, 0.75).unwrap();
        let twice = enforce_confidence(&once, &profile, 0.75).unwrap();
        prop_assert_eq!(&once, &twice);
        for ((a, b), p) in bits.iter().zip(&once).zip(&profile) {
            prop_assert!(!(*b && !*a));
            prop_assert!(!(*b && *p >= 0.75));
        }
    }

    #[test]
    fn violations_earn_nothing(
        bits in prop::collection::vec(any::<bool>(), 1..12),
        seed in 0u64..1000,
        bad in 0usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = bits.len();
        let mut topo = bits.clone();
        let bad = bad % n;
        topo[bad] = true;
        let mut profile: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        profile[bad] = rng.gen_range(0.75..=1.0);
        let costs: Vec<ParticipantCost> = (0..n)
            .map(|_| ParticipantCost { loss: rng.gen_range(0.0..2.0), time: rng.gen_range(0.0..2.0) })
            .collect();
        prop_assert_eq!(compute_reward(&costs, &topo, &profile, &AgentConfig::default()), 0.0);
    }

    #[test]
    fn reward_decreases_in_loss_and_time(
        costs in prop::collection::vec((0.01f64..2.0, 0.01f64..2.0), 1..8),
        which in 0usize..8,
        delta in 0.01f64..1.0,
    ) {
        let cfg = AgentConfig::default();
        let base: Vec<ParticipantCost> = costs.iter().map(|&(loss, time)| ParticipantCost { loss, time }).collect();
        let n = base.len();
        let topo = vec![true; n];
        let profile = vec![0.1; n];
        let r0 = compute_reward(&base, &topo, &profile, &cfg);
        let k = which % n;
        let mut more_loss = base.clone();
        more_loss[k].loss += delta;
        let mut more_time = base.clone();
        more_time[k].time += delta;
        prop_assert!(compute_reward(&more_loss, &topo, &profile, &cfg) < r0);
        prop_assert!(compute_reward(&more_time, &topo, &profile, &cfg) < r0);
    }

    #[test]
    fn greedy_selection_is_deterministic(seed in 0u64..1000, rng_a in 0u64..1000, rng_b in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = AgentConfig::default();
        let len = MdpState::len_for(4, 2);
        let set = PolicySet::new(4, len, &cfg, &mut rng).unwrap();
        let state = MdpState {
            features: (0..len).map(|_| rng.gen_range(0.0..1.0)).collect(),
            n_devices: 4,
            n_stations: 2,
        };
        let a = select_topology(&set, &state, 1.0, &mut ChaCha8Rng::seed_from_u64(rng_a)).unwrap();
        let b = select_topology(&set, &state, 1.0, &mut ChaCha8Rng::seed_from_u64(rng_b)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn oracle_flags_injected_device() {
    let mut logs: Vec<EventSequence> = (0..4)
        .map(|u| {
            let mut l = random_log(u, 15, 3);
            l.device = u as usize;
            l
        })
        .collect();
    let flow: Vec<Event> = (0..11)
        .map(|k| Event {
            features: vec![5.0; 3],
            attack: k == 10,
        })
        .collect();
    logs[2].extend(&flow[..10]).unwrap();
    let truths = [false, false, true, false];
    let prof = anticipate(
        &PredictorSet::Shared(Predictor::Oracle),
        &logs,
        10,
        &truths,
        0,
    )
    .unwrap();
    assert_eq!(prof.probs.len(), 4);
    assert_eq!(prof.probs, vec![0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn noisy_oracle_rates_over_many_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<WindowRow> = (0..20_000)
        .map(|k| WindowRow {
            device: 0,
            start: k,
            x: vec![vec![rng.gen::<f64>(), rng.gen::<f64>()]],
            y: k % 2 == 0,
        })
        .collect();
    let test = WindowedDataset { window: 1, rows };
    let p = Predictor::NoisyOracle {
        fp: 0.24,
        fn_rate: 0.27,
        seed: 99,
    };
    // The oracle reads the truth through the window label.
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for r in &test.rows {
        let v = p.probability(&r.x, r.y).unwrap();
        if r.y && v < 0.5 {
            fn_ += 1;
        }
        if !r.y && v >= 0.5 {
            fp += 1;
        }
    }
    assert!((fp as f64 / 10_000.0 - 0.24).abs() <= 0.02);
    assert!((fn_ as f64 / 10_000.0 - 0.27).abs() <= 0.02);
    let perfect = evaluate_anticipator(&Predictor::Constant(0.0), &test).unwrap();
    assert_eq!(
        (perfect.accuracy, perfect.fp, perfect.fn_rate),
        (0.5, 0.0, 1.0)
    );
}
