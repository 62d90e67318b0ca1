//! Post-hoc analyses of trained models: accuracy against imposter offset,
//! Grad-CAM electrode attribution, deep embeddings, hand-crafted features and
//! subject silhouettes.

pub mod features;
pub mod report;
pub mod silhouette;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::VideoFeatureTrack;
use crate::error::{Error, Result};
use crate::model::{Batch, MatchModel};
use crate::nn::{Ctx, Seq};
use crate::sampling::{SamplingConfig, build_offset_dataset};
use crate::training::{SplitData, evaluate_accuracy};

pub use features::{BANDS, BandDef, n_traditional_features, traditional_features};
pub use silhouette::{SilhouetteResult, silhouette};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPoint {
    pub t_sep: f64,
    pub accuracy: f64,
    pub n_samples: usize,
}

/// Accuracy on `split` when every imposter starts `t_sep` seconds after the
/// matching segment ends. Both port assignments of every segment are
/// evaluated.
pub fn offset_sweep(
    model: &mut MatchModel<f32>,
    split: &SplitData,
    track: &VideoFeatureTrack,
    sampling: &SamplingConfig,
    offsets: &[f64],
    batch_size: usize,
) -> Result<Vec<OffsetPoint>> {
    offsets
        .iter()
        .map(|&t_sep| {
            let ds = build_offset_dataset(&split.recordings, track, sampling, t_sep)?;
            let accuracy = evaluate_accuracy(model, &split.corpus, &ds, batch_size)?;
            Ok(OffsetPoint {
                t_sep,
                accuracy,
                n_samples: ds.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScoreMap {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_runs: usize,
}

impl ChannelScoreMap {
    /// Channel indices by descending mean score.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mean.len()).collect();
        idx.sort_by(|&a, &b| self.mean[b].total_cmp(&self.mean[a]).then(a.cmp(&b)));
        idx
    }
}

/// Min-max scaling to `[0, 1]`.
pub fn min_max_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate("scores have zero dynamic range".into()));
    }
    Ok(x.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Unnormalized Grad-CAM score per channel of the model's attribution layer,
/// averaged over every sample in `split`. The target is the logit of the
/// matching video: `z` when it sits on port a, `−z` otherwise (one-way
/// models: `z`).
pub fn gradcam_raw_scores(model: &mut MatchModel<f32>, split: &SplitData, batch_size: usize) -> Result<Vec<f64>> {
    let ds = &split.dataset;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("no samples for Grad-CAM".into()));
    }
    let tap = model.gradcam_tap();
    model.eeg.set_tap(Some(tap));
    let mut total: Option<Vec<f64>> = None;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let two_way = model.two_way();
    let result = (|| -> Result<()> {
        for chunk in idx.chunks(batch_size.max(1)) {
            let batch = Batch::<f32>::assemble(&split.corpus, ds, chunk, two_way)?;
            model.forward(&batch, &mut Ctx::eval())?;
            let target: Vec<f32> = batch
                .labels
                .iter()
                .map(|&y| if !two_way || y > 0.5 { 1.0 } else { -1.0 })
                .collect();
            model.backward(&target, false);
            let (act, grad) = model
                .eeg
                .take_tap()
                .ok_or_else(|| Error::Degenerate("attribution layer was not recorded".into()))?;
            let scores = total.get_or_insert_with(|| vec![0.0; act.c]);
            accumulate_gradcam(&act, &grad, scores);
        }
        Ok(())
    })();
    model.eeg.set_tap(None);
    model.clear();
    result?;
    let n = ds.len() as f64;
    Ok(total.unwrap_or_default().into_iter().map(|s| s / n).collect())
}

/// Adds `ReLU(mean_t ∂y/∂A · mean_t A)` per channel of every sample.
fn accumulate_gradcam(act: &Seq<f32>, grad: &Seq<f32>, scores: &mut [f64]) {
    let (t, c) = (act.t, act.c);
    for b in 0..act.b {
        let (a, g) = (act.sample(b), grad.sample(b));
        let mut ma = vec![0.0f64; c];
        let mut mg = vec![0.0f64; c];
        for ti in 0..t {
            for ch in 0..c {
                ma[ch] += a[ti * c + ch] as f64;
                mg[ch] += g[ti * c + ch] as f64;
            }
        }
        for ch in 0..c {
            scores[ch] += (mg[ch] / t as f64 * ma[ch] / t as f64).max(0.0);
        }
    }
}

/// Per run: raw scores, min-max normalized. Then mean and population
/// standard deviation across runs.
pub fn gradcam_channel_scores(
    models: &mut [MatchModel<f32>],
    split: &SplitData,
    channel_names: &[String],
    batch_size: usize,
) -> Result<ChannelScoreMap> {
    if models.is_empty() {
        return Err(Error::Config("Grad-CAM needs at least one trained model".into()));
    }
    let runs = models
        .iter_mut()
        .map(|m| min_max_normalize(&gradcam_raw_scores(m, split, batch_size)?))
        .collect::<Result<Vec<_>>>()?;
    let c = runs[0].len();
    let r = runs.len() as f64;
    let mean: Vec<f64> = (0..c).map(|i| runs.iter().map(|s| s[i]).sum::<f64>() / r).collect();
    let std = (0..c)
        .map(|i| (runs.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / r).sqrt())
        .collect();
    Ok(ChannelScoreMap {
        names: channel_names.iter().take(c).cloned().collect(),
        mean,
        std,
        n_runs: runs.len(),
    })
}

/// Eval-mode EEG-branch output for one `[channels × samples]` segment,
/// flattened feature-major (`f·T + t`).
pub fn extract_embedding(model: &mut MatchModel<f32>, eeg_segment: ArrayView2<f32>) -> Result<Vec<f32>> {
    let cfg = &model.config;
    if eeg_segment.dim() != (cfg.eeg_channels, cfg.eeg_len) {
        return Err(Error::Shape(format!(
            "segment is {:?}, model expects ({}, {})",
            eeg_segment.dim(),
            cfg.eeg_channels,
            cfg.eeg_len
        )));
    }
    let x = Seq::from_vec(1, cfg.eeg_len, cfg.eeg_channels, eeg_segment.t().iter().copied().collect());
    Ok(embed(model, &x).remove(0))
}

fn embed(model: &mut MatchModel<f32>, x: &Seq<f32>) -> Vec<Vec<f32>> {
    let out = model.eeg.forward(x, &mut Ctx::eval());
    model.eeg.clear();
    let (t, f) = (out.t, out.c);
    (0..out.b)
        .map(|b| {
            let s = out.sample(b);
            let mut v = vec![0.0; t * f];
            for ti in 0..t {
                for fi in 0..f {
                    v[fi * t + ti] = s[ti * f + fi];
                }
            }
            v
        })
        .collect()
}

/// Distinct EEG segments of a split as `(subject index, start sample)`, in
/// dataset order.
pub fn unique_segments(split: &SplitData) -> Vec<(usize, usize)> {
    let mut seen = std::collections::BTreeSet::new();
    split
        .dataset
        .samples
        .iter()
        .map(|s| (s.subject, s.eeg_start))
        .filter(|k| seen.insert(*k))
        .collect()
}

/// Embeddings `[segments × F·T]` of the given segments.
pub fn embed_segments(
    model: &mut MatchModel<f32>,
    split: &SplitData,
    segments: &[(usize, usize)],
    batch_size: usize,
) -> Result<Array2<f32>> {
    let (len, c) = (split.dataset.eeg_len, split.corpus.n_channels);
    let mut rows = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(batch_size.max(1)) {
        let mut x = Seq::<f32>::zeros(chunk.len(), len, c);
        for (i, &(subject, start)) in chunk.iter().enumerate() {
            let src = split.corpus.eeg[subject]
                .get(start * c..(start + len) * c)
                .ok_or_else(|| Error::OutOfBounds(format!("segment at {start}")))?;
            x.sample_mut(i).copy_from_slice(src);
        }
        rows.extend(embed(model, &x));
    }
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| Error::Shape(e.to_string()))
}

/// Traditional features `[segments × 1956]` of the given segments.
pub fn segment_features(split: &SplitData, segments: &[(usize, usize)]) -> Result<Array2<f64>> {
    let len = split.dataset.eeg_len;
    let d = n_traditional_features(split.corpus.n_channels, BANDS.len());
    let mut out = Array2::<f64>::zeros((segments.len(), d));
    for (subject, rec) in split.recordings.iter().enumerate() {
        let rows: Vec<usize> = (0..segments.len()).filter(|&i| segments[i].0 == subject).collect();
        if rows.is_empty() {
            continue;
        }
        let starts: Vec<usize> = rows.iter().map(|&i| segments[i].1).collect();
        let f = traditional_features(rec, &starts, len, &BANDS)?;
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(i).assign(&f.row(k));
        }
    }
    Ok(out)
}

/// Standardizes every column to zero mean and unit variance; constant
/// columns become 0.
pub fn zscore_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    let n = x.nrows().max(1) as f64;
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteComparison {
    pub traditional: SilhouetteResult,
    pub deep: Option<SilhouetteResult>,
}

/// Subject silhouette of z-scored traditional features and, if a model is
/// given, of its deep embeddings, over the distinct segments of `split`.
pub fn silhouette_comparison(
    model: Option<&mut MatchModel<f32>>,
    split: &SplitData,
    batch_size: usize,
) -> Result<SilhouetteComparison> {
    let segments = unique_segments(split);
    let labels: Vec<String> = segments.iter().map(|&(s, _)| split.corpus.subject_ids[s].clone()).collect();
    let trad = zscore_columns(&segment_features(split, &segments)?);
    let traditional = silhouette(trad.view(), &labels)?;
    let deep = model
        .map(|m| -> Result<SilhouetteResult> {
            let emb = embed_segments(m, split, &segments, batch_size)?.mapv(|v| v as f64);
            silhouette(emb.view(), &labels)
        })
        .transpose()?;
    Ok(SilhouetteComparison { traditional, deep })
}
