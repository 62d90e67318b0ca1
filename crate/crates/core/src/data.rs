//! Domain types shared by every stage of the pipeline.

use ndarray::{Array2, ArrayView2, Axis, s};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montage;

/// Per-frame video feature width produced by the upstream image encoder.
pub const VIDEO_FEATURE_DIM: usize = 768;
pub const EEG_FS: f64 = 1000.0;
pub const VIDEO_FPS: f64 = 25.0;
/// Samples per subject in a full-length recording (210 s at 1 kHz).
pub const PAPER_EEG_SAMPLES: usize = 210_000;
pub const PAPER_VIDEO_FRAMES: usize = 5_250;

/// One subject's multichannel recording, `[channels × samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub channel_names: Vec<String>,
    pub fs: f64,
    pub data: Array2<f32>,
}

impl EegRecording {
    pub fn new(subject_id: impl Into<String>, fs: f64, data: Array2<f32>) -> Result<Self> {
        let rec = Self {
            subject_id: subject_id.into(),
            channel_names: montage::canonical_names(),
            fs,
            data,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels() != montage::N_CHANNELS {
            return Err(Error::Shape(format!(
                "recording `{}` has {} channels, expected {}",
                self.subject_id,
                self.n_channels(),
                montage::N_CHANNELS
            )));
        }
        if self.channel_names.len() != self.n_channels() {
            return Err(Error::Shape(format!(
                "recording `{}` has {} channel names for {} channels",
                self.subject_id,
                self.channel_names.len(),
                self.n_channels()
            )));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Shape(format!("non-positive sampling rate {}", self.fs)));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(self.data.view())
    }

    /// Copies out `[channels × len]` starting at sample `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Array2<f32>> {
        if start + len > self.n_samples() {
            return Err(Error::OutOfBounds(format!(
                "eeg samples {start}..{} beyond {}",
                start + len,
                self.n_samples()
            )));
        }
        Ok(self.data.slice(s![.., start..start + len]).to_owned())
    }
}

/// Per-frame feature matrix of one video, `[768 × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatureTrack {
    pub track_id: String,
    pub fps: f64,
    pub features: Array2<f32>,
}

impl VideoFeatureTrack {
    pub fn new(track_id: impl Into<String>, fps: f64, features: Array2<f32>) -> Result<Self> {
        let track = Self {
            track_id: track_id.into(),
            fps,
            features,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.features.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.fps
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim() != VIDEO_FEATURE_DIM {
            return Err(Error::Shape(format!(
                "track `{}` has feature dim {}, expected {VIDEO_FEATURE_DIM}",
                self.track_id,
                self.feature_dim()
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Shape(format!("non-positive frame rate {}", self.fps)));
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Array2<f32>> {
        if start + len > self.n_frames() {
            return Err(Error::OutOfBounds(format!(
                "video frames {start}..{} beyond {}",
                start + len,
                self.n_frames()
            )));
        }
        Ok(self.features.slice(s![.., start..start + len]).to_owned())
    }

    /// Frame-major copy `[frames × dim]`, the layout the networks consume.
    pub fn frame_major(&self) -> Array2<f32> {
        self.features.t().as_standard_layout().into_owned()
    }
}

/// A window into a recording or a video track, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub start_s: f64,
    pub duration_s: f64,
    pub source_id: String,
}

impl SegmentRef {
    pub fn new(start_s: f64, duration_s: f64, source_id: impl Into<String>) -> Self {
        Self {
            start_s,
            duration_s,
            source_id: source_id.into(),
        }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    /// `start_s ≥ 0` and `end ≤ source_duration`, with a tolerance for
    /// accumulated floating error on the 1 s grid.
    pub fn fits(&self, source_duration_s: f64) -> bool {
        const EPS: f64 = 1e-9;
        self.start_s >= -EPS && self.end_s() <= source_duration_s + EPS
    }

    /// First sample index at rate `rate` (rounded to the nearest sample).
    pub fn start_index(&self, rate: f64) -> usize {
        (self.start_s * rate).round().max(0.0) as usize
    }
}

/// One fully materialized classification example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSample {
    pub subject_id: String,
    /// `[channels × duration·fs]`.
    pub eeg_segment: Array2<f32>,
    /// `[768 × duration·fps]`.
    pub video_a: Array2<f32>,
    /// Absent for one-way models.
    pub video_b: Option<Array2<f32>>,
    /// 1 iff `video_a` is the matching video.
    pub label: u8,
    /// `imposter_start − matching_end` in seconds.
    pub imposter_offset_s: f64,
}

impl TrialSample {
    pub fn validate(&self, duration_s: f64, fs: f64, fps: f64) -> Result<()> {
        let eeg_len = (duration_s * fs).round() as usize;
        let vid_len = (duration_s * fps).round() as usize;
        if self.eeg_segment.ncols() != eeg_len {
            return Err(Error::Shape(format!(
                "eeg segment has {} samples, expected {eeg_len}",
                self.eeg_segment.ncols()
            )));
        }
        for v in std::iter::once(&self.video_a).chain(self.video_b.as_ref()) {
            if v.ncols() != vid_len {
                return Err(Error::Shape(format!(
                    "video segment has {} frames, expected {vid_len}",
                    v.ncols()
                )));
            }
        }
        if self.label > 1 {
            return Err(Error::Shape(format!("label {} is not binary", self.label)));
        }
        Ok(())
    }
}

pub fn check_finite(view: ArrayView2<f32>) -> Result<()> {
    match view.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Transposes `[channels × time]` into a contiguous time-major buffer.
pub(crate) fn time_major_into(src: ArrayView2<f32>, dst: &mut [f32]) {
    let (rows, cols) = src.dim();
    debug_assert_eq!(dst.len(), rows * cols);
    for (c, row) in src.axis_iter(Axis(0)).enumerate() {
        for (t, v) in row.iter().enumerate() {
            dst[t * rows + c] = *v;
        }
    }
}
