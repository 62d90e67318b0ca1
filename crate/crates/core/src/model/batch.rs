use std::collections::BTreeMap;

use crate::data::{EegRecording, VideoFeatureTrack, time_major_into};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Seq};
use crate::sampling::Dataset;

use super::ModelConfig;

/// Recordings and the video track transposed to time-major rows, so a
/// segment is one contiguous slice.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub subject_ids: Vec<String>,
    pub n_channels: usize,
    /// Per subject, `[samples × channels]`.
    pub eeg: Vec<Vec<f32>>,
    pub video_dim: usize,
    /// `[frames × video_dim]`.
    pub video: Vec<f32>,
    pub n_frames: usize,
}

impl Corpus {
    pub fn new(recordings: &[EegRecording], track: &VideoFeatureTrack) -> Self {
        let n_channels = recordings.first().map_or(0, |r| r.n_channels());
        let time_major = |m: ndarray::ArrayView2<f32>| {
            let mut v = vec![0.0; m.len()];
            time_major_into(m, &mut v);
            v
        };
        let eeg = recordings.iter().map(|r| time_major(r.data.view())).collect();
        Self {
            subject_ids: recordings.iter().map(|r| r.subject_id.clone()).collect(),
            n_channels,
            eeg,
            video_dim: track.feature_dim(),
            video: time_major(track.features.view()),
            n_frames: track.n_frames(),
        }
    }

    fn eeg_window<S: Scalar>(&self, subject: usize, start: usize, len: usize, out: &mut [S]) -> Result<()> {
        let c = self.n_channels;
        let rec = &self.eeg[subject];
        let src = rec.get(start * c..(start + len) * c).ok_or_else(|| {
            Error::OutOfBounds(format!("eeg samples {start}..{} of `{}`", start + len, self.subject_ids[subject]))
        })?;
        out.iter_mut().zip(src).for_each(|(o, &v)| *o = S::from_f32(v));
        Ok(())
    }

    fn video_window<S: Scalar>(&self, start: usize, len: usize, out: &mut [S]) -> Result<()> {
        let d = self.video_dim;
        let src = self
            .video
            .get(start * d..(start + len) * d)
            .ok_or_else(|| Error::OutOfBounds(format!("video frames {start}..{} of {}", start + len, self.n_frames)))?;
        out.iter_mut().zip(src).for_each(|(o, &v)| *o = S::from_f32(v));
        Ok(())
    }
}

/// A mini-batch. `videos` holds each distinct video window once; `port_a`
/// and `port_b` index into it.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub eeg: Seq<S>,
    pub videos: Seq<S>,
    pub port_a: Vec<usize>,
    pub port_b: Option<Vec<usize>>,
    pub labels: Vec<f32>,
}

impl<S: Scalar> Batch<S> {
    pub fn len(&self) -> usize {
        self.eeg.b
    }

    pub fn is_empty(&self) -> bool {
        self.eeg.b == 0
    }

    /// Gathers samples `indices` of `dataset`.
    pub fn assemble(corpus: &Corpus, dataset: &Dataset, indices: &[usize], two_way: bool) -> Result<Self> {
        let (el, vl) = (dataset.eeg_len, dataset.video_len);
        let mut eeg = Seq::zeros(indices.len(), el, corpus.n_channels);
        let mut windows: BTreeMap<usize, usize> = BTreeMap::new();
        let mut slot = |frame: usize| {
            let n = windows.len();
            *windows.entry(frame).or_insert(n)
        };
        let mut port_a = Vec::with_capacity(indices.len());
        let mut port_b = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for (i, &idx) in indices.iter().enumerate() {
            let s = dataset
                .samples
                .get(idx)
                .ok_or_else(|| Error::OutOfBounds(format!("sample {idx} of {}", dataset.len())))?;
            corpus.eeg_window(s.subject, s.eeg_start, el, eeg.sample_mut(i))?;
            port_a.push(slot(s.video_a));
            if two_way {
                port_b.push(slot(s.video_b));
            }
            labels.push(s.label as f32);
        }
        let mut videos = Seq::zeros(windows.len(), vl, corpus.video_dim);
        for (&frame, &k) in &windows {
            corpus.video_window(frame, vl, videos.sample_mut(k))?;
        }
        Ok(Self {
            eeg,
            videos,
            port_a,
            port_b: two_way.then_some(port_b),
            labels,
        })
    }

    pub(crate) fn validate(&self, config: &ModelConfig, two_way: bool) -> Result<()> {
        let want_eeg = (config.eeg_len, config.eeg_channels);
        let want_video = (config.video_len, config.video_dim);
        if (self.eeg.t, self.eeg.c) != want_eeg {
            return Err(Error::Shape(format!(
                "eeg batch is {} × {}, model expects {} × {}",
                self.eeg.t, self.eeg.c, want_eeg.0, want_eeg.1
            )));
        }
        if (self.videos.t, self.videos.c) != want_video {
            return Err(Error::Shape(format!(
                "video batch is {} × {}, model expects {} × {}",
                self.videos.t, self.videos.c, want_video.0, want_video.1
            )));
        }
        if two_way != self.port_b.is_some() {
            return Err(Error::Shape(format!(
                "model is {}-way but the batch has {} video port(s)",
                if two_way { "two" } else { "one" },
                if self.port_b.is_some() { 2 } else { 1 }
            )));
        }
        let n = self.len();
        let ports_ok = self.port_a.len() == n
            && self.port_b.as_ref().is_none_or(|p| p.len() == n)
            && self.labels.len() == n
            && self.port_a.iter().chain(self.port_b.iter().flatten()).all(|&k| k < self.videos.b);
        if !ports_ok {
            return Err(Error::Shape("batch port indices are inconsistent".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{SampleRef, SamplingConfig, build_dataset};
    use crate::synth::{SynthConfig, generate_recordings};

    #[test]
    fn windows_match_materialized_samples() {
        let cfg = SynthConfig {
            n_subjects: 2,
            duration_s: 12.0,
            fs: 500.0,
            n_train: 2,
            n_val: 0,
            n_test: 0,
            ..SynthConfig::default()
        };
        let (recs, track) = generate_recordings(&cfg).unwrap();
        let ds = build_dataset(&recs, &track, &SamplingConfig::default()).unwrap();
        let corpus = Corpus::new(&recs, &track);
        let idx: Vec<usize> = (0..ds.len()).step_by(3).collect();
        let batch = Batch::<f32>::assemble(&corpus, &ds, &idx, true).unwrap();
        for (i, &k) in idx.iter().enumerate() {
            let t = ds.materialize(k, &recs, &track, true).unwrap();
            for ti in 0..ds.eeg_len {
                for c in 0..corpus.n_channels {
                    assert_eq!(batch.eeg.at(i, ti, c), t.eeg_segment[[c, ti]]);
                }
            }
            let vb = t.video_b.unwrap();
            for ti in [0, ds.video_len - 1] {
                for d in [0, 100, 767] {
                    assert_eq!(batch.videos.at(batch.port_a[i], ti, d), t.video_a[[d, ti]]);
                    assert_eq!(batch.videos.at(batch.port_b.as_ref().unwrap()[i], ti, d), vb[[d, ti]]);
                }
            }
            assert_eq!(batch.labels[i], t.label as f32);
        }
    }

    #[test]
    fn shared_windows_are_stored_once() {
        let cfg = SynthConfig {
            n_subjects: 1,
            duration_s: 10.0,
            fs: 500.0,
            n_train: 1,
            n_val: 0,
            n_test: 0,
            ..SynthConfig::default()
        };
        let (recs, track) = generate_recordings(&cfg).unwrap();
        let sample = |video_a, video_b| SampleRef {
            subject: 0,
            matching_start_s: 0.0,
            eeg_start: 0,
            video_a,
            video_b,
            label: 1,
            t_sep: 1.0,
        };
        let ds = Dataset {
            subject_ids: vec!["sub-01".into()],
            eeg_len: 1500,
            video_len: 75,
            samples: vec![sample(0, 100), sample(100, 0), sample(0, 25)],
        };
        let b = Batch::<f32>::assemble(&Corpus::new(&recs, &track), &ds, &[0, 1, 2], true).unwrap();
        assert_eq!(b.videos.b, 3);
        assert_eq!(b.port_a, vec![0, 1, 0]);
        assert_eq!(b.port_b, Some(vec![1, 0, 2]));
    }
}
