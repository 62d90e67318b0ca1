//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use vidmatch::model::{Batch, MatchModel, ModelConfig, ModelSpec};
use vidmatch::nn::{Ctx, Seq, TransformerConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Amplitude of the `freq` component of `x` by direct DFT projection.
pub fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in x.iter().enumerate() {
        let ph = 2.0 * PI * freq * n as f64 / fs;
        re += v * ph.cos();
        im += v * ph.sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

/// Attenuation in dB that `filter` applies to a unit sine at `freq`,
/// measured on the central half so edge transients are excluded. The window
/// holds a whole number of periods.
pub fn attenuation_db(filter: impl Fn(&[f32]) -> Vec<f32>, freq: f64, fs: f64, seconds: f64) -> f64 {
    let n = (seconds * fs) as usize;
    let x: Vec<f32> = (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin() as f32).collect();
    let y = filter(&x);
    let period = fs / freq;
    let want = (n as f64 / 2.0 / period).floor().max(1.0) * period;
    let len = (want.round() as usize).min(n / 2);
    let mid = |v: &[f32]| -> Vec<f64> { v[n / 4..n / 4 + len].iter().map(|&s| s as f64).collect() };
    let a_in = tone_amplitude(&mid(&x), freq, fs);
    let a_out = tone_amplitude(&mid(&y), freq, fs);
    20.0 * (a_in / a_out.max(1e-300)).log10()
}

pub fn var(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn hjorth_oracle(x: &[f64]) -> (f64, f64, f64) {
    let d1 = diff(x);
    let d2 = diff(&d1);
    let mob = |a: &[f64], b: &[f64]| (var(b) / var(a)).sqrt();
    let m = mob(x, &d1);
    (var(x), m, mob(&d1, &d2) / m)
}

pub fn de_oracle(x: &[f64]) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E * var(x)).ln()
}

pub fn pfd_oracle(x: &[f64]) -> f64 {
    let d = diff(x);
    let mut changes = 0usize;
    for i in 1..d.len() {
        if d[i] * d[i - 1] < 0.0 {
            changes += 1;
        }
    }
    let n = x.len() as f64;
    n.log10() / (n.log10() + (n / (n + 0.4 * changes as f64)).log10())
}

/// Silhouette straight from its definition.
pub fn silhouette_oracle(x: &[Vec<f64>], y: &[usize]) -> f64 {
    let n = x.len();
    let dist = |i: usize, j: usize| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut labels: Vec<usize> = y.to_vec();
    labels.sort();
    labels.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |l: usize| {
            let m: Vec<usize> = (0..n).filter(|&j| j != i && y[j] == l).collect();
            (m.iter().map(|&j| dist(i, j)).sum::<f64>() / m.len() as f64, m.len())
        };
        let (a, n_same) = mean_to(y[i]);
        if n_same == 0 {
            continue;
        }
        let b = labels.iter().filter(|&&l| l != y[i]).map(|&l| mean_to(l).0).fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

pub fn random_clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=200);
    let d = rng.random_range(1..=12);
    let k = rng.random_range(2..=6usize).min(n);
    let y: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    let x = y.iter().map(|&c| (0..d).map(|_| c as f64 + rng.random_range(-1.2..1.2)).collect()).collect();
    (x, y)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        eeg_channels: 3,
        eeg_len: 20,
        video_dim: 4,
        video_len: 5,
        feature_dim: Some(8),
        eeg_dilated_strides: vec![2, 2],
        video_dilated_strides: vec![1, 1],
        transformer: TransformerConfig { ff_dim: 16, ..TransformerConfig::default() },
        ..ModelConfig::default()
    }
}

fn random_seq(b: usize, t: usize, c: usize, rng: &mut ChaCha8Rng) -> Seq<f64> {
    Seq::from_vec(b, t, c, (0..b * t * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn tiny_batch(cfg: &ModelConfig, n: usize, two_way: bool, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        eeg: random_seq(n, cfg.eeg_len, cfg.eeg_channels, &mut rng),
        videos: random_seq(n + 1, cfg.video_len, cfg.video_dim, &mut rng),
        port_a: (0..n).collect(),
        port_b: two_way.then(|| (1..=n).collect()),
        labels: (0..n).map(|i| (i % 2) as f32).collect(),
    }
}

pub struct GradCheck {
    pub checked: usize,
    /// Largest relative error among entries with magnitude above 1e-7.
    pub worst_relative: f64,
    /// Entries with relative error >= 1e-4 and absolute error >= 1e-9.
    pub violations: usize,
}

/// Analytic EEG-input gradient of the mean BCE loss against central
/// differences with step 1e-6.
pub fn input_grad_check(spec: &str) -> GradCheck {
    let spec = ModelSpec::parse(spec).unwrap();
    let cfg = tiny_config();
    let mut m = MatchModel::<f64>::new(&spec, &cfg, 5).unwrap();
    let mut batch = tiny_batch(&cfg, 3, spec.is_two_way(), 9);
    let loss = |m: &mut MatchModel<f64>, b: &Batch<f64>| {
        let z = m.forward(b, &mut Ctx::eval()).unwrap();
        m.clear();
        MatchModel::<f64>::loss_grad(&z, &b.labels).0
    };
    let z = m.forward(&batch, &mut Ctx::eval()).unwrap();
    let (_, dz) = MatchModel::<f64>::loss_grad(&z, &batch.labels);
    m.zero_grad();
    let dx = m.backward(&dz, true).unwrap();
    m.clear();
    let h = 1e-6;
    let mut out = GradCheck { checked: 0, worst_relative: 0.0, violations: 0 };
    for i in 0..batch.eeg.data.len() {
        let orig = batch.eeg.data[i];
        batch.eeg.data[i] = orig + h;
        let up = loss(&mut m, &batch);
        batch.eeg.data[i] = orig - h;
        let down = loss(&mut m, &batch);
        batch.eeg.data[i] = orig;
        let num = (up - down) / (2.0 * h);
        let err = (num - dx.data[i]).abs();
        let scale = num.abs().max(dx.data[i].abs());
        let rel = err / scale.max(1e-300);
        out.checked += 1;
        if scale > 1e-7 {
            out.worst_relative = out.worst_relative.max(rel);
        }
        if rel >= 1e-4 && err >= 1e-9 {
            out.violations += 1;
        }
    }
    out
}
