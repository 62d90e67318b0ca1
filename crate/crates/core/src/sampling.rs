//! Segment enumeration, imposter pairing and subject-level splits.
//!
//! Offsets follow one convention throughout: `t_sep = imposter_start −
//! matching_end`. With 3 s segments an imposter taken 1 s after the matching
//! segment has `t_sep = +1`, one taken 4 s before its start has `t_sep = −7`,
//! and `t_sep = −3` reproduces the matching segment itself.

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EegRecording, SegmentRef, TrialSample, VideoFeatureTrack};
use crate::error::{Error, Result};
use crate::io::{DatasetManifest, SplitSpec};
use crate::rng::rng_for;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Imposters both after (positive) and before (negative) the match.
    Balanced,
    /// Positive imposters only.
    Imbalanced,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "imbalanced" => Ok(Self::Imbalanced),
            other => Err(Error::Config(format!("unknown sampling mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Balanced => "balanced",
            Self::Imbalanced => "imbalanced",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub segment_s: f64,
    pub shift_s: f64,
    /// Positive imposters start this long after the matching segment ends.
    pub pos_gap_s: f64,
    /// Negative imposters start this long before the matching segment.
    pub neg_lead_s: f64,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            segment_s: 3.0,
            shift_s: 1.0,
            pos_gap_s: 1.0,
            neg_lead_s: 4.0,
            mode: SamplingMode::Balanced,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_s > 0.0 && self.shift_s > 0.0) {
            return Err(Error::Config("segment_s and shift_s must be positive".into()));
        }
        if !(self.pos_gap_s >= 0.0) {
            return Err(Error::Config("pos_gap_s must be non-negative".into()));
        }
        if !(self.neg_lead_s >= self.segment_s) {
            return Err(Error::Config(format!(
                "neg_lead_s ({}) must be at least segment_s ({}) so negative imposters cannot overlap",
                self.neg_lead_s, self.segment_s
            )));
        }
        Ok(())
    }

    pub fn sides(&self) -> &'static [ImposterSide] {
        match self.mode {
            SamplingMode::Balanced => &[ImposterSide::Pos, ImposterSide::Neg],
            SamplingMode::Imbalanced => &[ImposterSide::Pos],
        }
    }

    /// Signed offset of an imposter on `side`.
    pub fn t_sep(&self, side: ImposterSide) -> f64 {
        match side {
            ImposterSide::Pos => self.pos_gap_s,
            ImposterSide::Neg => -self.neg_lead_s - self.segment_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImposterSide {
    Pos,
    Neg,
}

/// Segment grid for `cfg.mode`: a start is kept only when every imposter the
/// mode needs also fits in `[0, duration_s]`.
pub fn enumerate_segments(duration_s: f64, cfg: &SamplingConfig) -> Vec<SegmentRef> {
    enumerate_segments_with(duration_s, cfg, cfg.sides())
}

/// As [`enumerate_segments`] but with an explicit set of required imposter
/// sides (empty: plain sliding window).
pub fn enumerate_segments_with(duration_s: f64, cfg: &SamplingConfig, sides: &[ImposterSide]) -> Vec<SegmentRef> {
    let mut out = Vec::new();
    if duration_s + EPS < cfg.segment_s {
        return out;
    }
    let mut k = 0usize;
    loop {
        let start = k as f64 * cfg.shift_s;
        let seg = SegmentRef::new(start, cfg.segment_s, "");
        if !seg.fits(duration_s) {
            break;
        }
        if sides.iter().all(|&side| make_imposter(&seg, side, cfg, duration_s).is_ok()) {
            out.push(seg);
        }
        k += 1;
    }
    out
}

/// The imposter for `seg` on `side`, together with its `t_sep`.
pub fn make_imposter(
    seg: &SegmentRef,
    side: ImposterSide,
    cfg: &SamplingConfig,
    source_duration_s: f64,
) -> Result<(SegmentRef, f64)> {
    let start = match side {
        ImposterSide::Pos => seg.end_s() + cfg.pos_gap_s,
        ImposterSide::Neg => seg.start_s - cfg.neg_lead_s,
    };
    offset_segment(seg, start - seg.end_s(), source_duration_s)
}

/// Segment starting `t_sep` seconds after `seg` ends.
pub fn offset_segment(seg: &SegmentRef, t_sep: f64, source_duration_s: f64) -> Result<(SegmentRef, f64)> {
    let imposter = SegmentRef::new(seg.end_s() + t_sep, seg.duration_s, seg.source_id.clone());
    if !imposter.fits(source_duration_s) {
        return Err(Error::OutOfBounds(format!(
            "imposter [{:.3}, {:.3}] s outside [0, {source_duration_s:.3}] s",
            imposter.start_s,
            imposter.end_s()
        )));
    }
    Ok((imposter, t_sep))
}

/// A classification example by reference into a corpus. Materialize with
/// [`Dataset::materialize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    /// Index into the recordings the dataset was built from.
    pub subject: usize,
    pub matching_start_s: f64,
    pub eeg_start: usize,
    /// First frame of the video on port a.
    pub video_a: usize,
    /// First frame of the video on port b (two-way models only).
    pub video_b: usize,
    pub label: u8,
    pub t_sep: f64,
}

impl SampleRef {
    /// Frame index of the matching video.
    pub fn matching_frame(&self) -> usize {
        if self.label == 1 { self.video_a } else { self.video_b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    pub eeg_len: usize,
    pub video_len: usize,
    pub samples: Vec<SampleRef>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positive_fraction(&self) -> f64 {
        let ones = self.samples.iter().filter(|s| s.label == 1).count();
        ones as f64 / self.samples.len().max(1) as f64
    }

    pub fn materialize(
        &self,
        index: usize,
        recordings: &[EegRecording],
        track: &VideoFeatureTrack,
        two_way: bool,
    ) -> Result<TrialSample> {
        let s = &self.samples[index];
        let rec = &recordings[s.subject];
        Ok(TrialSample {
            subject_id: rec.subject_id.clone(),
            eeg_segment: rec.slice(s.eeg_start, self.eeg_len)?,
            video_a: track.slice(s.video_a, self.video_len)?,
            video_b: if two_way { Some(track.slice(s.video_b, self.video_len)?) } else { None },
            label: s.label,
            imposter_offset_s: s.t_sep,
        })
    }
}

fn check_alignment(recordings: &[EegRecording], track: &VideoFeatureTrack) -> Result<f64> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::EmptyDataset("no recordings".into()))?;
    let duration = first.duration_s();
    for rec in recordings {
        if (rec.duration_s() - duration).abs() > EPS || rec.fs != first.fs {
            return Err(Error::Shape(format!(
                "recording `{}` lasts {:.3} s at {} Hz, `{}` lasts {:.3} s at {} Hz",
                rec.subject_id,
                rec.duration_s(),
                rec.fs,
                first.subject_id,
                duration,
                first.fs
            )));
        }
    }
    if track.duration_s() + 0.5 / track.fps < duration {
        return Err(Error::Shape(format!(
            "video track lasts {:.3} s but recordings last {duration:.3} s",
            track.duration_s()
        )));
    }
    Ok(duration)
}

fn segment_lengths(cfg: &SamplingConfig, fs: f64, fps: f64) -> (usize, usize) {
    (
        (cfg.segment_s * fs).round() as usize,
        (cfg.segment_s * fps).round() as usize,
    )
}

/// One sample per (segment, required imposter side), ports assigned by a
/// seeded coin flip per subject.
pub fn build_dataset(recordings: &[EegRecording], track: &VideoFeatureTrack, cfg: &SamplingConfig) -> Result<Dataset> {
    cfg.validate()?;
    let duration = check_alignment(recordings, track)?;
    let fs = recordings[0].fs;
    let (eeg_len, video_len) = segment_lengths(cfg, fs, track.fps);
    let segments = enumerate_segments(duration, cfg);

    let mut samples = Vec::with_capacity(recordings.len() * segments.len() * cfg.sides().len());
    for (subject, _) in recordings.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, subject as u64);
        for seg in &segments {
            for &side in cfg.sides() {
                let (imposter, t_sep) = make_imposter(seg, side, cfg, duration)?;
                let matching_in_a = rng.random_bool(0.5);
                samples.push(pair_sample(subject, seg, &imposter, t_sep, matching_in_a, fs, track.fps));
            }
        }
    }
    Ok(Dataset {
        subject_ids: recordings.iter().map(|r| r.subject_id.clone()).collect(),
        eeg_len,
        video_len,
        samples,
    })
}

fn pair_sample(
    subject: usize,
    matching: &SegmentRef,
    imposter: &SegmentRef,
    t_sep: f64,
    matching_in_a: bool,
    fs: f64,
    fps: f64,
) -> SampleRef {
    let m = matching.start_index(fps);
    let i = imposter.start_index(fps);
    let (video_a, video_b, label) = if matching_in_a { (m, i, 1) } else { (i, m, 0) };
    SampleRef {
        subject,
        matching_start_s: matching.start_s,
        eeg_start: matching.start_index(fs),
        video_a,
        video_b,
        label,
        t_sep,
    }
}

/// Evaluation set for a single offset: every grid segment whose imposter at
/// `t_sep` fits, presented under both port assignments (labels 1 and 0).
pub fn build_offset_dataset(
    recordings: &[EegRecording],
    track: &VideoFeatureTrack,
    cfg: &SamplingConfig,
    t_sep: f64,
) -> Result<Dataset> {
    cfg.validate()?;
    let duration = check_alignment(recordings, track)?;
    let fs = recordings[0].fs;
    let (eeg_len, video_len) = segment_lengths(cfg, fs, track.fps);
    let segments = enumerate_segments_with(duration, cfg, &[]);

    let mut samples = Vec::new();
    for subject in 0..recordings.len() {
        for seg in &segments {
            let Ok((imposter, t_sep)) = offset_segment(seg, t_sep, duration) else {
                continue;
            };
            for matching_in_a in [true, false] {
                samples.push(pair_sample(subject, seg, &imposter, t_sep, matching_in_a, fs, track.fps));
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::OutOfBounds(format!("no segment admits an imposter at t_sep = {t_sep} s")));
    }
    Ok(Dataset {
        subject_ids: recordings.iter().map(|r| r.subject_id.clone()).collect(),
        eeg_len,
        video_len,
        samples,
    })
}

/// Random subject-level partition.
pub fn split_ids(ids: &[String], n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<SplitSpec> {
    let needed = n_train + n_val + n_test;
    if ids.len() < needed {
        return Err(Error::InsufficientSubjects {
            needed,
            available: ids.len(),
        });
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng_for(seed, 0x5b1));
    let split = SplitSpec {
        train: shuffled[..n_train].to_vec(),
        val: shuffled[n_train..n_train + n_val].to_vec(),
        test: shuffled[n_train + n_val..needed].to_vec(),
    };
    split.check_disjoint()?;
    Ok(split)
}

pub fn split_by_subject(
    manifest: &DatasetManifest,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitSpec> {
    split_ids(&manifest.subject_ids(), n_train, n_val, n_test, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::HashSet;

    fn paper() -> SamplingConfig {
        SamplingConfig::default()
    }

    fn corpus(n_subjects: usize, duration_s: usize) -> (Vec<EegRecording>, VideoFeatureTrack) {
        // short channel axis is enough: only shapes matter here, so use a
        // lightweight constant recording
        let recs = (0..n_subjects)
            .map(|i| EegRecording::new(format!("s{i:02}"), 100.0, Array2::zeros((64, duration_s * 100))).unwrap())
            .collect();
        let track = VideoFeatureTrack::new("v", 25.0, Array2::zeros((768, duration_s * 25))).unwrap();
        (recs, track)
    }

    #[test]
    fn balanced_grid_matches_feasibility_oracle() {
        let segs = enumerate_segments(210.0, &paper());
        // brute force: start ≥ 4 and start + 3 + 1 + 3 ≤ 210
        let expected: Vec<f64> = (0..=210).map(|s| s as f64).filter(|&s| s >= 4.0 && s + 7.0 <= 210.0).collect();
        assert_eq!(segs.iter().map(|s| s.start_s).collect::<Vec<_>>(), expected);
        assert_eq!(segs.len(), 200);
        assert_eq!(segs.first().unwrap().start_s, 4.0);
        assert_eq!(segs.last().unwrap().start_s, 203.0);
    }

    #[test]
    fn imbalanced_grid_only_needs_the_positive_imposter() {
        let cfg = SamplingConfig { mode: SamplingMode::Imbalanced, ..paper() };
        let segs = enumerate_segments(210.0, &cfg);
        let expected: Vec<f64> = (0..=210).map(|s| s as f64).filter(|&s| s + 7.0 <= 210.0).collect();
        assert_eq!(segs.iter().map(|s| s.start_s).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn plain_window_and_short_source() {
        let segs = enumerate_segments_with(10.0, &paper(), &[]);
        assert_eq!(segs.iter().map(|s| s.start_s).collect::<Vec<_>>(), (0..8).map(|s| s as f64).collect::<Vec<_>>());
        assert!(enumerate_segments(2.0, &paper()).is_empty());
    }

    #[test]
    fn imposter_offsets() {
        let seg = SegmentRef::new(10.0, 3.0, "x");
        let (pos, t) = make_imposter(&seg, ImposterSide::Pos, &paper(), 210.0).unwrap();
        assert_eq!((pos.start_s, t), (14.0, 1.0));
        let (neg, t) = make_imposter(&seg, ImposterSide::Neg, &paper(), 210.0).unwrap();
        assert_eq!((neg.start_s, t), (6.0, -7.0));
        assert_eq!(paper().t_sep(ImposterSide::Neg), -7.0);
        let early = SegmentRef::new(2.0, 3.0, "x");
        assert!(matches!(make_imposter(&early, ImposterSide::Neg, &paper(), 210.0), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn dataset_counts() {
        let (recs, track) = corpus(1, 210);
        let balanced = build_dataset(&recs, &track, &paper()).unwrap();
        assert_eq!(balanced.len(), 2 * 200);
        let cfg = SamplingConfig { mode: SamplingMode::Imbalanced, ..paper() };
        let imbalanced = build_dataset(&recs, &track, &cfg).unwrap();
        assert_eq!(imbalanced.len(), 204);
        assert!(imbalanced.samples.iter().all(|s| s.t_sep == 1.0));
        assert_eq!(balanced.eeg_len, 300);
        assert_eq!(balanced.video_len, 75);
    }

    #[test]
    fn dataset_is_deterministic_and_labels_follow_ports() {
        let (recs, track) = corpus(3, 60);
        let cfg = SamplingConfig { seed: 42, ..paper() };
        let a = build_dataset(&recs, &track, &cfg).unwrap();
        let b = build_dataset(&recs, &track, &cfg).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            let matching = (s.matching_start_s * 25.0).round() as usize;
            assert_eq!(s.matching_frame(), matching);
            let imposter = if s.label == 1 { s.video_b } else { s.video_a };
            let imposter_start = imposter as f64 / 25.0;
            assert!((imposter_start - (s.matching_start_s + 3.0) - s.t_sep).abs() < 1e-9);
            assert_ne!(imposter, matching);
        }
    }

    #[test]
    fn balanced_labels_are_binomial() {
        let (recs, track) = corpus(10, 210);
        let ds = build_dataset(&recs, &track, &SamplingConfig { seed: 7, ..paper() }).unwrap();
        let n = ds.len() as f64;
        let ones = ds.positive_fraction() * n;
        let sigma = (n * 0.25).sqrt();
        assert!((ones - n / 2.0).abs() <= 3.0 * sigma, "{ones} of {n}");
    }

    #[test]
    fn mismatched_track_is_rejected() {
        let (recs, _) = corpus(1, 20);
        let short = VideoFeatureTrack::new("v", 25.0, Array2::zeros((768, 10 * 25))).unwrap();
        assert!(matches!(build_dataset(&recs, &short, &paper()), Err(Error::Shape(_))));
    }

    #[test]
    fn offset_dataset_pairs_both_ports() {
        let (recs, track) = corpus(1, 30);
        let ds = build_offset_dataset(&recs, &track, &paper(), -3.0).unwrap();
        // every plain-window segment (0..=27) admits the identical imposter
        assert_eq!(ds.len(), 2 * 28);
        assert!(ds.samples.iter().all(|s| s.video_a == s.video_b));
        assert!((ds.positive_fraction() - 0.5).abs() < 1e-12);
        assert!(build_offset_dataset(&recs, &track, &paper(), 40.0).is_err());
    }

    #[test]
    fn splits() {
        let ids: Vec<String> = (0..56).map(|i| format!("s{i}")).collect();
        let split = split_ids(&ids, 45, 5, 6, 1).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (45, 5, 6));
        let all: HashSet<_> = split.train.iter().chain(&split.val).chain(&split.test).collect();
        assert_eq!(all.len(), 56);

        let ten: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let split = split_ids(&ten, 7, 1, 2, 3).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (7, 1, 2));
        split.check_disjoint().unwrap();

        let five: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        assert!(matches!(
            split_ids(&five, 45, 5, 6, 0),
            Err(Error::InsufficientSubjects { needed: 56, available: 5 })
        ));
    }
}
