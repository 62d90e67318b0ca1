use ndarray::{Array2, Axis, s};

use vidmatch::analysis::silhouette_comparison;
use vidmatch::preprocess::{PreprocessConfig, preprocess_recording};
use vidmatch::sampling::SamplingConfig;
use vidmatch::synth::{SynthConfig, generate_recordings};
use vidmatch::training::SplitData;
use vidmatch::{EegRecording, VideoFeatureTrack};

fn corpus(n_subjects: usize, duration_s: f64, confound: f64, seed: u64) -> (Vec<EegRecording>, VideoFeatureTrack) {
    let cfg = SynthConfig {
        n_subjects,
        duration_s,
        subject_confound_strength: confound,
        n_train: n_subjects,
        n_val: 0,
        n_test: 0,
        seed,
        ..SynthConfig::default()
    };
    generate_recordings(&cfg).unwrap()
}

fn traditional_silhouette(confound: f64) -> f64 {
    let (recs, track) = corpus(2, 60.0, confound, 11);
    let recs: Vec<_> = recs.iter().map(|r| preprocess_recording(r, &PreprocessConfig::default()).unwrap()).collect();
    let ids: Vec<String> = recs.iter().map(|r| r.subject_id.clone()).collect();
    // Disjoint segments: overlapping ones share samples and cluster by subject on their own.
    let sampling = SamplingConfig { shift_s: 3.0, ..SamplingConfig::default() };
    let split = SplitData::new(&recs, &track, &ids, &sampling).unwrap();
    silhouette_comparison(None, &split, 64).unwrap().traditional.overall
}

#[test]
fn confound_strength_controls_subject_clustering() {
    let none = traditional_silhouette(0.0);
    let strong = traditional_silhouette(2.0);
    assert!(none < 0.05, "strength 0: {none}");
    assert!(strong > 0.2, "strength 2: {strong}");
}

const LAGS: [usize; 10] = [0, 2, 4, 6, 8, 10, 12, 14, 16, 18];
const MAX_LAG: usize = 18;

/// Frame-rate EEG: 40-sample block means, each channel z-scored.
fn frames(rec: &EegRecording, hop: usize) -> Array2<f64> {
    let n = rec.n_samples() / hop;
    let mut out = Array2::<f64>::zeros((n, rec.n_channels()));
    for (c, row) in rec.data.axis_iter(Axis(0)).enumerate() {
        for f in 0..n {
            out[[f, c]] = row.slice(s![f * hop..(f + 1) * hop]).iter().map(|&v| v as f64).sum::<f64>() / hop as f64;
        }
        let mut col = out.column_mut(c);
        let m = col.mean().unwrap();
        let sd = col.std(0.0);
        col.mapv_inplace(|v| (v - m) / sd);
    }
    out
}

/// Rows `t` in `range` of the lagged design matrix.
fn lagged(x: &Array2<f64>, range: std::ops::Range<usize>) -> Array2<f64> {
    let c = x.ncols();
    let mut out = Array2::<f64>::zeros((range.len(), c * LAGS.len()));
    for (r, t) in range.enumerate() {
        for (k, &lag) in LAGS.iter().enumerate() {
            out.slice_mut(s![r, k * c..(k + 1) * c]).assign(&x.row(t + lag));
        }
    }
    out
}

/// Solves `a · w = b` for symmetric positive definite `a`.
fn cholesky_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = if i == j { sum.sqrt() } else { sum / l[[j, j]] };
        }
    }
    let mut w = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut v = w[[i, col]];
            for k in 0..i {
                v -= l[[i, k]] * w[[k, col]];
            }
            w[[i, col]] = v / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = w[[i, col]];
            for k in i + 1..n {
                v -= l[[k, i]] * w[[k, col]];
            }
            w[[i, col]] = v / l[[i, i]];
        }
    }
    w
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    ab / (aa * bb).sqrt()
}

/// A ridge backward model from lagged EEG to the video features, fitted on
/// three subjects, decides each held-out 3 s pair by which candidate window
/// correlates better with the reconstruction.
#[test]
fn linear_probe_beats_chance() {
    let (recs, track) = corpus(4, 90.0, 1.0, 5);
    let hop = (recs[0].fs / track.fps) as usize;
    let y = track.features.t().mapv(|v| v as f64);
    let n_frames = y.nrows();
    let fit_rows = 0..n_frames - MAX_LAG;

    let p = recs[0].n_channels() * LAGS.len();
    let mut xtx = Array2::<f64>::zeros((p, p));
    let mut xty = Array2::<f64>::zeros((p, y.ncols()));
    for rec in &recs[..3] {
        let x = lagged(&frames(rec, hop), fit_rows.clone());
        xtx += &x.t().dot(&x);
        xty += &x.t().dot(&y.slice(s![fit_rows.clone(), ..]));
    }
    let ridge = 1e-2 * xtx.diag().sum() / p as f64;
    for i in 0..p {
        xtx[[i, i]] += ridge;
    }
    let w = cholesky_solve(&xtx, &xty);

    let x = lagged(&frames(&recs[3], hop), fit_rows.clone());
    let recon = x.dot(&w);
    let seg = (3.0 * track.fps) as usize;
    let usable = seg - MAX_LAG;
    let window = |m: &Array2<f64>, start: usize| m.slice(s![start..start + usable, ..]).iter().copied().collect::<Vec<f64>>();
    let (mut correct, mut total) = (0usize, 0usize);
    let step = track.fps as usize;
    let mut start = 7 * step;
    while start + seg + 4 * step + seg <= n_frames - MAX_LAG {
        let r = window(&recon, start);
        let matching = pearson(&r, &window(&y, start));
        for imposter in [start + 4 * step, start - 7 * step] {
            total += 1;
            if matching > pearson(&r, &window(&y, imposter)) {
                correct += 1;
            }
        }
        start += step;
    }
    let acc = correct as f64 / total as f64;
    assert!(total >= 100, "only {total} pairs");
    assert!(acc > 0.55, "probe accuracy {acc:.3} on {total} pairs");
}
