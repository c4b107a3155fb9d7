//! Recurrent anticipators trained on synthetic traffic.

use mtdfl::anticipator::{
    evaluate_anticipator, pooled_windows, train_anticipator, AnticipatorTrainConfig,
};
use mtdfl::harness::config::TrafficConfig;
use mtdfl::harness::synth::{gen_synthetic_traffic, TrafficGen};
use mtdfl::tensorkit::CellKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Balanced accuracy on held-out traffic after training at the given SNR.
fn held_out_score(snr: f64, arch: CellKind, seed: u64) -> f64 {
    let cfg = TrafficConfig {
        snr,
        ..TrafficConfig::default()
    };
    let gen = TrafficGen::new(&cfg, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = pooled_windows(
        &gen_synthetic_traffic(&gen, 8, 120, 6, &mut rng).unwrap(),
        10,
    );
    let test = pooled_windows(
        &gen_synthetic_traffic(&gen, 8, 120, 6, &mut rng).unwrap(),
        10,
    );
    let tc = AnticipatorTrainConfig {
        arch,
        epochs: 15,
        ..AnticipatorTrainConfig::default()
    };
    let p = train_anticipator(&train, &tc, &mut rng).unwrap();
    let s = evaluate_anticipator(&p, &test).unwrap();
    1.0 - (s.fp + s.fn_rate) / 2.0
}

#[test]
fn clear_precursors_are_recognized() {
    for arch in [CellKind::Gru, CellKind::Lstm] {
        let score = held_out_score(3.0, arch, 5);
        assert!(score >= 0.9, "{arch}: balanced accuracy {score}");
    }
}

#[test]
fn pure_noise_is_a_coin_flip() {
    let score = held_out_score(0.0, CellKind::Gru, 5);
    assert!((score - 0.5).abs() <= 0.12, "balanced accuracy {score}");
}
