//! Numeric kernels, aggregation and poisoning properties.

use mtdfl::adversary::{
    craft_attack1, craft_attack2, poison_uploads, Attack1Config, AttackConfig, AttackKind,
    CompromisePlan, DeviationSign, Upload,
};
use mtdfl::flengine::{
    aggregate_hierarchical, aggregate_partial, local_train, ModelParams, TaskModel, Weighting,
};
use mtdfl::flengine::{evaluate, LocalTrainConfig};
use mtdfl::harness::synth::gen_synthetic_flows;
use mtdfl::tensorkit::{softmax, Adam, AdamConfig, GruCell, Optimizer, OptimizerConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(v: Vec<f64>) -> ModelParams {
    let n = v.len();
    ModelParams::new(v, vec![[n, 1]]).unwrap()
}

fn flat_mean(items: &[(ModelParams, usize)]) -> Vec<f64> {
    let total: f64 = items.iter().map(|(_, n)| *n as f64).sum();
    let dim = items[0].0.len();
    (0..dim)
        .map(|k| {
            items
                .iter()
                .map(|(p, n)| p.values[k] * *n as f64)
                .sum::<f64>()
                / total
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_normalized_and_shift_invariant(
        z in prop::collection::vec(-50.0f64..50.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gru_stays_in_unit_box(seed in 0u64..1000, h in prop::collection::vec(-0.999f64..0.999, 4), x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = GruCell::random(3, 4, &mut rng);
        let next = cell.step_hidden(&h, &x).unwrap();
        prop_assert!(next.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn adam_is_bitwise_deterministic(seed in 0u64..1000, steps in 1usize..30) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut opt = Adam::new(AdamConfig::default());
            let mut p: Vec<f64> = (0..5).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            for _ in 0..steps {
                let g: Vec<f64> = p.iter().map(|v| 2.0 * v - 0.3).collect();
                opt.step(&mut p, &g).unwrap();
            }
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn hierarchical_equals_flat(
        groups in prop::collection::vec(
            prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 3), 1usize..500), 1..6),
            1..5,
        ),
    ) {
        let owned: Vec<Vec<(ModelParams, usize)>> = groups
            .iter()
            .map(|g| g.iter().map(|(v, n)| (params(v.clone()), *n)).collect())
            .collect();
        let refs: Vec<Vec<(&ModelParams, usize)>> = owned
            .iter()
            .map(|g| g.iter().map(|(p, n)| (p, *n)).collect())
            .collect();
        let hier = aggregate_hierarchical(&refs, Weighting::DataSize).unwrap();
        let all: Vec<(ModelParams, usize)> = owned.into_iter().flatten().collect();
        for (a, b) in hier.values.iter().zip(flat_mean(&all)) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn aggregation_permutation_invariant(
        items in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 4), 1usize..100), 2..8),
        rot in 0usize..8,
    ) {
        let owned: Vec<(ModelParams, usize)> = items.iter().map(|(v, n)| (params(v.clone()), *n)).collect();
        let a: Vec<(&ModelParams, usize)> = owned.iter().map(|(p, n)| (p, *n)).collect();
        let mut b = a.clone();
        b.rotate_left(rot % a.len());
        b.reverse();
        let (pa, _) = aggregate_partial(&a, Weighting::DataSize).unwrap();
        let (pb, _) = aggregate_partial(&b, Weighting::DataSize).unwrap();
        for (x, y) in pa.values.iter().zip(&pb.values) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn identical_uploads_aggregate_exactly(v in prop::collection::vec(-1e3f64..1e3, 1..10), k in 1usize..8, n in 1usize..50) {
        let p = params(v);
        let ups: Vec<(&ModelParams, usize)> = (0..k).map(|j| (&p, n + j)).collect();
        let groups = vec![ups[..k / 2].to_vec(), ups[k / 2..].to_vec()];
        prop_assert_eq!(aggregate_hierarchical(&groups, Weighting::DataSize).unwrap(), p);
    }

    #[test]
    fn attack1_closed_form(v in prop::collection::vec(-1e3f64..1e3, 1..16), lr in 0.0f64..1.0, scale in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = params(v);
        let cfg = Attack1Config { lr, scale, noise: 0.0 };
        let out = craft_attack1(&g, &cfg, &mut rng).unwrap();
        let coeff = 1.0 - lr + lr * scale;
        for (o, x) in out.values.iter().zip(&g.values) {
            prop_assert_eq!(o.to_bits(), (coeff * x).to_bits());
        }
    }

    #[test]
    fn attack2_envelope_regimes(models in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 3..8)) {
        let owned: Vec<ModelParams> = models.into_iter().map(params).collect();
        let refs: Vec<&ModelParams> = owned.iter().collect();
        let inside = craft_attack2(&refs, 0.5, DeviationSign::Subtract).unwrap();
        let far = craft_attack2(&refs, 50.0, DeviationSign::Subtract).unwrap();
        for k in 0..owned[0].len() {
            let col: Vec<f64> = owned.iter().map(|m| m.values[k]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > 1e-9 {
                prop_assert!(inside.values[k] >= lo - 1e-12 && inside.values[k] <= hi + 1e-12);
                prop_assert!(far.values[k] < lo);
            }
        }
    }

    #[test]
    fn poisoning_touches_only_compromised_participants(
        seed in 0u64..500,
        participants in prop::collection::btree_set(0usize..10, 2..10),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = AttackConfig { kind: AttackKind::Attack1, ..AttackConfig::default() };
        let plan = CompromisePlan::draw(0, 10, 5, &cfg, &mut rng).unwrap();
        let mut ups: Vec<Upload> = participants
            .iter()
            .map(|&u| Upload {
                device: u,
                params: params(vec![u as f64 + 1.0, 0.5]),
                samples: 10,
                loss: 0.1,
                poisoned: false,
            })
            .collect();
        let before = ups.clone();
        let honest: Vec<ModelParams> = ups.iter().map(|u| u.params.clone()).collect();
        let pool: Vec<&ModelParams> = honest.iter().collect();
        let n = poison_uploads(&mut ups, &pool, &plan, &cfg, 0, 10, &mut rng).unwrap();
        let expected = participants.iter().filter(|u| plan.compromised.contains(u)).count();
        prop_assert_eq!(n, expected);
        for (a, b) in ups.iter().zip(&before) {
            let hit = plan.compromised.contains(&a.device);
            prop_assert_eq!(a.poisoned, hit);
            if !hit {
                prop_assert_eq!(&a.params, &b.params);
            }
        }
    }
}

#[test]
fn separable_task_is_learned_centrally() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pool = gen_synthetic_flows(4000, 32, 0.5, &mut rng).unwrap();
    // Stretch the signal so that the classes barely overlap.
    let shifted: Vec<f64> = pool
        .features
        .chunks(32)
        .zip(&pool.labels)
        .flat_map(|(x, &y)| {
            let s = if y == 1 { 3.0 } else { -3.0 };
            x.iter().map(move |v| v + s).collect::<Vec<_>>()
        })
        .collect();
    pool.features = shifted;
    let test = {
        let mut t = mtdfl::flengine::DeviceShard::empty(0, 32);
        for k in 3000..4000 {
            let (x, y) = pool.sample(k);
            t.push(x, y);
        }
        t
    };
    let mut train = mtdfl::flengine::DeviceShard::empty(0, 32);
    for k in 0..3000 {
        let (x, y) = pool.sample(k);
        train.push(x, y);
    }
    let model = TaskModel::new(32, &[], 2, &mut rng).unwrap();
    let cfg = LocalTrainConfig {
        epochs: 3,
        batch_size: 32,
        optimizer: OptimizerConfig::Sgd { lr: 0.1 },
    };
    let up = local_train(&model, &model.params(), &train, &cfg, &mut rng)
        .unwrap()
        .unwrap();
    let (acc, _) = evaluate(&model.with_params(&up.params).unwrap(), &test).unwrap();
    assert!(acc >= 0.95, "central accuracy {acc}");
}
