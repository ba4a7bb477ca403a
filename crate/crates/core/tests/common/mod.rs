//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's DSP, selection or gradient code.
#![allow(dead_code)]

use std::f64::consts::PI;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wser_core::model::{Architecture, Model, ModelConfig};

pub const SR: f64 = 16000.0;
pub const FRAME: usize = 512;
pub const HOP: usize = 400;
pub const NFFT: usize = 512;
pub const BINS: usize = 50;
pub const FMIN: f64 = 60.0;
pub const FMAX: f64 = 3600.0;
pub const FLOOR: f64 = 1e-6;

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangle weight of filter `b` at frequency `f`: rises from edge `b` to
/// edge `b + 1`, falls to edge `b + 2`, zero outside.
pub fn triangle(b: usize, f: f64) -> f64 {
    let step = (mel(FMAX) - mel(FMIN)) / (BINS + 1) as f64;
    let edge = |i: usize| match i {
        0 => FMIN,
        i if i == BINS + 1 => FMAX,
        i => inv_mel(mel(FMIN) + i as f64 * step),
    };
    let (lo, mid, hi) = (edge(b), edge(b + 1), edge(b + 2));
    if f > lo && f <= mid {
        (f - lo) / (mid - lo)
    } else if f > mid && f < hi {
        (hi - f) / (hi - mid)
    } else {
        0.0
    }
}

/// Log-mel by direct DFT summation, frame by frame.
pub fn naive_log_mel(x: &[f64]) -> Vec<Vec<f64>> {
    let frames = (x.len() - FRAME) / HOP + 1;
    let window: Vec<f64> = (0..FRAME).map(|n| (PI * n as f64 / FRAME as f64).sin().powi(2)).collect();
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let seg: Vec<f64> = (0..FRAME).map(|n| x[i * HOP + n] * window[n]).collect();
        let power: Vec<f64> = (0..=NFFT / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in seg.iter().enumerate() {
                    let a = -2.0 * PI * (k * n % NFFT) as f64 / NFFT as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let row = (0..BINS)
            .map(|b| {
                let e: f64 = power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| triangle(b, k as f64 * SR / NFFT as f64) * p)
                    .sum();
                (e + FLOOR).ln()
            })
            .collect();
        out.push(row);
    }
    out
}

/// First label in taxonomy order attaining the maximum score.
pub fn brute_force_argmax(scores: &IndexMap<String, f64>, labels: &[String]) -> String {
    let max = labels.iter().map(|l| scores[l]).fold(f64::NEG_INFINITY, f64::max);
    labels.iter().find(|l| scores[*l] == max).unwrap().clone()
}

/// Mean cross-entropy computed from scratch with a log-sum-exp.
pub fn reference_cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Random small model with random inputs and labels.
pub fn random_problem(seed: u64) -> (Model, Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(3..9);
    let bins = rng.random_range(3..9);
    let k = rng.random_range(2..6);
    let architecture = if seed.is_multiple_of(2) {
        Architecture::Linear
    } else {
        Architecture::SmallCnn {
            channels: vec![rng.random_range(1..4), rng.random_range(1..4)],
            kernel: 3,
            stride: rng.random_range(1..3),
        }
    };
    let mut cfg = ModelConfig::new(frames, k, architecture, seed);
    cfg.input_bins = bins;
    let mut model = Model::new(cfg).unwrap();
    // nonzero biases so their gradients are exercised too
    for t in model.params_mut().tensors_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = rng.random_range(1..5);
    let inputs = (0..batch * frames * bins).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..batch).map(|_| rng.random_range(0..k)).collect();
    (model, inputs, labels)
}

/// Largest relative difference between analytic and central-difference
/// gradients, `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &Model, inputs: &[f64], labels: &[usize], h: f64) -> f64 {
    let (_, grads) = model.loss_and_grad(inputs, labels).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (ti, t) in model.params().tensors().iter().enumerate() {
        for j in 0..t.data.len() {
            let orig = t.data[j];
            probe.params_mut().tensors_mut()[ti].data[j] = orig + h;
            let up = probe.loss_and_grad(inputs, labels).unwrap().0;
            probe.params_mut().tensors_mut()[ti].data[j] = orig - h;
            let down = probe.loss_and_grad(inputs, labels).unwrap().0;
            probe.params_mut().tensors_mut()[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors()[ti].data[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// `1/K ± z·σ` for an accuracy over `n` trials.
pub fn chance_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    let p = 1.0 / k as f64;
    let s = (p * (1.0 - p) / n as f64).sqrt();
    (p - z * s, p + z * s)
}
