//! Hand-crafted per-segment EEG features: Hjorth parameters, differential
//! entropy, Petrosian fractal dimension and hemispheric asymmetry, each per
//! frequency band.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::EegRecording;
use crate::error::{Error, Result};
use crate::montage;
use crate::preprocess::bandpass_filter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDef {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

pub const BANDS: [BandDef; 6] = [
    BandDef { name: "delta", lo: 1.0, hi: 3.0 },
    BandDef { name: "theta", lo: 4.0, hi: 7.0 },
    BandDef { name: "alpha", lo: 8.0, hi: 13.0 },
    BandDef { name: "beta", lo: 14.0, hi: 30.0 },
    BandDef { name: "gamma", lo: 31.0, hi: 50.0 },
    BandDef { name: "high_gamma", lo: 51.0, hi: 100.0 },
];

/// Left/right electrode pairs used for the asymmetry coefficient.
pub const SYMMETRIC_PAIRS: [(&str, &str); 6] =
    [("F7", "F8"), ("F3", "F4"), ("C3", "C4"), ("P3", "P4"), ("O1", "O2"), ("T7", "T8")];

/// Per-channel features per band.
pub const CHANNEL_FEATURES: [&str; 5] = ["activity", "mobility", "complexity", "differential_entropy", "petrosian_fd"];

const BAND_ORDER: usize = 4;

pub fn n_traditional_features(n_channels: usize, n_bands: usize) -> usize {
    n_bands * (n_channels * CHANNEL_FEATURES.len() + SYMMETRIC_PAIRS.len())
}

fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hjorth {
    pub activity: f64,
    pub mobility: f64,
    pub complexity: f64,
}

/// Hjorth parameters with population variances. Mobility and complexity are
/// 0 when a variance they divide by is 0.
pub fn hjorth(x: &[f64]) -> Hjorth {
    let d1 = diff(x);
    let d2 = diff(&d1);
    let (v0, v1, v2) = (variance(x), variance(&d1), variance(&d2));
    let mobility = if v0 > 0.0 { (v1 / v0).sqrt() } else { 0.0 };
    let mobility_d = if v1 > 0.0 { (v2 / v1).sqrt() } else { 0.0 };
    let complexity = if mobility > 0.0 { mobility_d / mobility } else { 0.0 };
    Hjorth {
        activity: v0,
        mobility,
        complexity,
    }
}

/// Gaussian differential entropy `½·ln(2πe·σ²)`; 0 for a constant signal.
pub fn differential_entropy(x: &[f64]) -> f64 {
    let v = variance(x);
    if v > 0.0 {
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln()
    } else {
        0.0
    }
}

/// Petrosian fractal dimension; `N_δ` counts sign changes of the first
/// difference.
pub fn petrosian_fd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 3 {
        return 1.0;
    }
    let d = diff(x);
    let n_delta = d.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64;
    n.log10() / (n.log10() + (n / (n + 0.4 * n_delta)).log10())
}

/// `(P_L − P_R)/(P_L + P_R)` on mean power; 0 when both are silent.
pub fn asymmetry(left: &[f64], right: &[f64]) -> f64 {
    let power = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    let (l, r) = (power(left), power(right));
    if l + r > 0.0 { (l - r) / (l + r) } else { 0.0 }
}

/// Feature matrix `[segments × bands·(channels·5 + pairs)]` for segments
/// `[start, start + len)` of `rec`. Within a band the columns are the five
/// channel features channel by channel, then the pair asymmetries.
pub fn traditional_features(
    rec: &EegRecording,
    starts: &[usize],
    len: usize,
    bands: &[BandDef],
) -> Result<Array2<f64>> {
    if let Some(&s) = starts.iter().find(|&&s| s + len > rec.n_samples()) {
        return Err(Error::OutOfBounds(format!(
            "segment {s}..{} beyond {} samples",
            s + len,
            rec.n_samples()
        )));
    }
    let pairs: Vec<(usize, usize)> = SYMMETRIC_PAIRS
        .iter()
        .map(|(l, r)| -> Result<(usize, usize)> {
            let find = |name: &str| {
                montage::channel_index(&rec.channel_names, name)
                    .ok_or_else(|| Error::Shape(format!("recording `{}` has no channel {name}", rec.subject_id)))
            };
            Ok((find(l)?, find(r)?))
        })
        .collect::<Result<_>>()?;
    let n_ch = rec.n_channels();
    let per_band = n_ch * CHANNEL_FEATURES.len() + pairs.len();
    let mut out = Array2::<f64>::zeros((starts.len(), bands.len() * per_band));
    let mut degenerate = 0usize;
    for (bi, band) in bands.iter().enumerate() {
        let filtered = bandpass_filter(rec.data.view(), rec.fs, band.lo, band.hi, BAND_ORDER)?;
        for (si, &start) in starts.iter().enumerate() {
            let seg: Vec<Vec<f64>> = filtered
                .rows()
                .into_iter()
                .map(|row| row.iter().skip(start).take(len).map(|&v| v as f64).collect())
                .collect();
            let mut row = out.row_mut(si);
            let base = bi * per_band;
            for (c, x) in seg.iter().enumerate() {
                let h = hjorth(x);
                if h.activity == 0.0 {
                    degenerate += 1;
                }
                let feats = [h.activity, h.mobility, h.complexity, differential_entropy(x), petrosian_fd(x)];
                for (k, f) in feats.into_iter().enumerate() {
                    row[base + c * CHANNEL_FEATURES.len() + k] = f;
                }
            }
            for (k, &(l, r)) in pairs.iter().enumerate() {
                row[base + n_ch * CHANNEL_FEATURES.len() + k] = asymmetry(&seg[l], &seg[r]);
            }
        }
    }
    if degenerate > 0 {
        log::warn!(
            "`{}`: {degenerate} zero-variance channel segments; their Hjorth and entropy features are 0",
            rec.subject_id
        );
    }
    Ok(out)
}
