//! Channel, mobility and timing properties.

use mtdfl::netmodel::{
    assign_coverage, build_snapshot, link_rate, step_mobility, BaseStation, ChannelParams, Device,
    GridWorld, Point, RateLog, TurnProbs,
};
use mtdfl::timemodel::{
    partial_agg_time, total_agg_time, AggregationMode, ComputeCosts, TimeModel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn channel(coeff: f64, exponent: f64, noise: f64) -> ChannelParams {
    ChannelParams {
        path_loss_coeff: coeff,
        path_loss_exponent: exponent,
        noise_power: noise,
        log: RateLog::Natural,
    }
}

fn costs() -> ComputeCosts {
    ComputeCosts {
        train_cycles_per_sample: 1e3,
        aggregate_cycles_per_unit: 1e3,
        inference_cycles: 1e5,
        local_epochs: 5,
        model_size: 66.0,
    }
}

fn stations() -> Vec<BaseStation> {
    [(50.0, 50.0, 3.2e9, 28e6), (350.0, 350.0, 2.6e9, 30e6)]
        .iter()
        .enumerate()
        .map(|(id, &(x, y, cpu, bw))| BaseStation {
            id,
            position: Point::new(x, y),
            coverage_radius: 300.0,
            cpu_freq: cpu,
            bandwidth: bw,
            backhaul_rate: 1e9,
            tx_power: 2.5,
        })
        .collect()
}

fn fleet(seed: u64, n: usize) -> Vec<Device> {
    let world = GridWorld::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| {
            let (position, heading) = world.random_road_point(&mut rng);
            Device {
                id,
                position,
                heading,
                speed: 12.5,
                cpu_freq: 1.9e9 + 0.5e9 * (id as f64 / n as f64),
                tx_power: 0.2,
                data_size: 100 * (id + 1),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rate_strictly_decreases_with_distance(
        bw in 1e5f64..1e8,
        pt in 1e-3f64..10.0,
        coeff in 1e-3f64..10.0,
        exponent in 2.0f64..6.0,
        d1 in 1.0f64..500.0,
        extra in 0.5f64..500.0,
    ) {
        let ch = channel(coeff, exponent, 1e-20);
        let near = ch.rate(bw, pt, d1).unwrap();
        let far = ch.rate(bw, pt, d1 + extra).unwrap();
        prop_assert!(far < near, "rate({}) = {far} !< rate({d1}) = {near}", d1 + extra);
    }

    #[test]
    fn zero_power_gives_zero_rate(bw in 1.0f64..1e9, g in 0.0f64..1.0, noise in 1e-25f64..1.0) {
        prop_assert_eq!(link_rate(bw, 0.0, g, noise).unwrap(), 0.0);
    }

    #[test]
    fn coverage_is_a_function(xs in prop::collection::vec((0.0f64..400.0, 0.0f64..400.0), 1..40)) {
        let pts: Vec<Point> = xs.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let st = stations();
        let a = assign_coverage(&pts, &st);
        prop_assert_eq!(a.len(), pts.len());
        for (p, s) in pts.iter().zip(&a) {
            if let Some(i) = s {
                prop_assert!(p.distance(&st[*i].position) <= st[*i].coverage_radius);
            } else {
                prop_assert!(st.iter().all(|b| p.distance(&b.position) > b.coverage_radius));
            }
        }
    }

    #[test]
    fn mobility_stays_on_grid_and_reproduces(seed in 0u64..1000, steps in 1usize..40, dt in 0.1f64..20.0) {
        let world = GridWorld::default();
        let start = fleet(seed, 6);
        let turns = TurnProbs::default();
        let run = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut d = start.clone();
            let mut all = Vec::new();
            for _ in 0..steps {
                d = step_mobility(&world, &d, dt, &turns, &mut rng).unwrap();
                all.push(d.iter().map(|x| (x.position.x.to_bits(), x.position.y.to_bits())).collect::<Vec<_>>());
                for x in &d {
                    assert!(world.is_on_grid(&x.position), "{:?} left the roads", x.position);
                }
            }
            all
        };
        prop_assert_eq!(run(seed), run(seed));
    }

    #[test]
    fn hierarchy_consistency(
        rates in prop::collection::vec(prop::collection::vec(1e5f64..1e9, 0..5), 1..4),
        backhaul in 1e5f64..1e10,
    ) {
        let c = costs();
        let per: Vec<f64> = rates.iter().map(|r| partial_agg_time(r, 3e9, &c).unwrap()).collect();
        let active: Vec<bool> = rates.iter().map(|r| !r.is_empty()).collect();
        let total = total_agg_time(&per, &vec![backhaul; per.len()], &active, &c, 3e9).unwrap();
        let max_active = per.iter().zip(&active).filter(|(_, a)| **a).map(|(p, _)| *p).fold(0.0, f64::max);
        prop_assert!(total.is_finite() && total >= 0.0);
        prop_assert!(total >= max_active);
    }

    #[test]
    fn straggler_removal_and_monotonicity(seed in 0u64..500, bump in 1.01f64..4.0) {
        let devices = fleet(seed, 8);
        let st = stations();
        let ch = channel(1.0, 5.0, 3.98e-21);
        let snap = build_snapshot(0, &devices, &st, &ch).unwrap();
        let model = TimeModel { costs: costs(), cloud_cpu: 3.2e9, mode: AggregationMode::EdgeCloud };
        let parts: Vec<usize> = (0..8).filter(|&u| snap.is_covered(u)).collect();
        prop_assume!(parts.len() >= 2);
        let sizes: Vec<usize> = devices.iter().map(|d| d.data_size).collect();
        let full = model.recognition_time(&parts, &sizes, &snap).unwrap();
        for v in full.t_int.iter().chain(&full.t_down).chain(&full.t_inf) {
            prop_assert!(v.is_finite() && *v >= 0.0);
        }

        let straggler = *parts
            .iter()
            .max_by(|&&a, &&b| {
                let ta = sizes[a] as f64 / snap.dev_cpu[a];
                let tb = sizes[b] as f64 / snap.dev_cpu[b];
                ta.total_cmp(&tb)
            })
            .unwrap();
        let rest: Vec<usize> = parts.iter().copied().filter(|&u| u != straggler).collect();
        let reduced = model.recognition_time(&rest, &sizes, &snap).unwrap();
        for &u in &rest {
            prop_assert!(reduced.t_int_of(u).unwrap() <= full.t_int_of(u).unwrap() + 1e-18);
        }

        let mut faster = snap.clone();
        for row in faster.rate_matrix.iter_mut().chain(faster.downlink_matrix.iter_mut()) {
            for r in row.iter_mut() {
                *r *= bump;
            }
        }
        for c in faster.dev_cpu.iter_mut().chain(faster.bs_cpu.iter_mut()) {
            *c *= bump;
        }
        let quick = model.recognition_time(&parts, &sizes, &faster).unwrap();
        for (a, b) in quick.t_int.iter().zip(&full.t_int) {
            prop_assert!(a <= b);
        }
    }
}
