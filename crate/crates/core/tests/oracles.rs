mod common;

use common::*;
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wser_core::corpus::Taxonomy;
use wser_core::dsp::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelConfig, Waveform};
use wser_core::labeler::select_weak_label;
use wser_core::model::cross_entropy;

fn random_wave(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
    Waveform::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 16000).unwrap()
}

#[test]
fn log_mel_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..4 {
        let w = random_wave(&mut rng, 8000);
        let got = log_mel(&w, &MelConfig::default()).unwrap();
        let want = naive_log_mel(w.samples());
        assert_eq!(got.num_frames(), want.len());
        for (i, row) in want.iter().enumerate() {
            for (a, b) in got.row(i).iter().zip(row) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn one_khz_tone_peaks_in_nearest_filter() {
    let cfg = MelConfig::default();
    let x: Vec<f64> = (0..16000)
        .map(|t| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * t as f64 / 16000.0).sin())
        .collect();
    let m = log_mel(&Waveform::new(x, 16000).unwrap(), &cfg).unwrap();
    // filter peaks sit at the interior mel-spaced points
    let step = (hz_to_mel(3600.0) - hz_to_mel(60.0)) / 51.0;
    let nearest = (0..50)
        .min_by(|&a, &b| {
            let da = (mel_to_hz(hz_to_mel(60.0) + (a + 1) as f64 * step) - 1000.0).abs();
            let db = (mel_to_hz(hz_to_mel(60.0) + (b + 1) as f64 * step) - 1000.0).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    for i in 0..m.num_frames() {
        let row = m.row(i);
        let best = (0..50).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(best, nearest, "frame {i}");
    }
}

#[test]
fn first_filter_peak_bin_matches_hand_computation() {
    let fb = mel_filterbank(&MelConfig::default()).unwrap();
    let delta = (hz_to_mel(3600.0) - hz_to_mel(60.0)) / 51.0;
    let peak_hz = mel_to_hz(hz_to_mel(60.0) + delta);
    let nearest_bin = (peak_hz / (16000.0 / 512.0)).round() as usize;
    let argmax = (0..fb[0].len()).max_by(|&a, &b| fb[0][a].total_cmp(&fb[0][b])).unwrap();
    assert_eq!(argmax, nearest_bin);
    for (b, row) in fb.iter().enumerate() {
        for (k, w) in row.iter().enumerate() {
            assert!((w - triangle(b, k as f64 * 16000.0 / 512.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn select_weak_label_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let k = rng.random_range(2..=43);
        let labels: Vec<String> = (0..k).map(|i| format!("e{i}")).collect();
        let taxonomy = Taxonomy::new("t", &labels).unwrap();
        let mut scores: IndexMap<String, f64> = labels
            .iter()
            .map(|l| (l.clone(), rng.random_range(0..4) as f64 / 4.0))
            .collect();
        scores.reverse();
        assert_eq!(select_weak_label(&scores, &taxonomy).unwrap(), brute_force_argmax(&scores, &labels));
    }
}

#[test]
fn cross_entropy_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let k = rng.random_range(2..10);
        let b = rng.random_range(1..6);
        let logits: Vec<f64> = (0..k * b).map(|_| rng.random_range(-8.0..8.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let (loss, _) = cross_entropy(&logits, k, &labels).unwrap();
        assert!((loss - reference_cross_entropy(&logits, k, &labels)).abs() < 1e-10);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 100..106 {
        let (model, x, y) = random_problem(seed);
        let err = gradient_check(&model, &x, &y, 1e-5);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn absent_class_bias_gradient_matches_finite_differences() {
    let (model, x, _) = random_problem(200);
    // every example labelled 0, so other class biases only see softmax mass
    let batch = x.len() / model.config().input_len();
    let y = vec![0; batch];
    assert!(gradient_check(&model, &x, &y, 1e-5) < 1e-4);
}
