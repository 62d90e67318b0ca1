//! Array files and the dataset manifest.
//!
//! Arrays are stored header-free: little-endian `f32`, row-major, so a
//! `[channels × time]` matrix keeps each channel's samples contiguous. Shapes
//! live only in the JSON manifest.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{EegRecording, VideoFeatureTrack, check_finite};
use crate::error::{Error, Result};
use crate::montage;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `matrix` as raw little-endian `f32`.
pub fn save_array(path: impl AsRef<Path>, matrix: ArrayView2<f32>) -> Result<()> {
    let path = path.as_ref();
    check_finite(matrix)?;
    let mut bytes = Vec::with_capacity(matrix.len() * 4);
    for v in matrix.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a `[rows × cols]` array; the file size must match exactly.
pub fn load_array(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (rows * cols * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub eeg_path: String,
    pub shape: [usize; 2],
    pub fs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub track_id: String,
    pub path: String,
    pub shape: [usize; 2],
    pub fps: f64,
}

/// Subject-level partition. Lists are disjoint; subjects not listed are
/// unused.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Manifest(format!("subject `{id}` appears in more than one split")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub subjects: Vec<SubjectEntry>,
    pub video_tracks: Vec<TrackEntry>,
    pub split: SplitSpec,
    /// Electrode order shared by all recordings; the canonical montage when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            subjects: Vec::new(),
            video_tracks: Vec::new(),
            split: SplitSpec::default(),
            channel_names: None,
            base_dir: base_dir.into(),
        }
    }

    /// Reads and validates a manifest, including file sizes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channel_names.clone().unwrap_or_else(montage::canonical_names)
    }

    pub fn subject(&self, subject_id: &str) -> Result<&SubjectEntry> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == subject_id)
            .ok_or_else(|| Error::MissingSubject(subject_id.to_string()))
    }

    pub fn track(&self, track_id: &str) -> Result<&TrackEntry> {
        self.video_tracks
            .iter()
            .find(|t| t.track_id == track_id)
            .ok_or_else(|| Error::MissingTrack(track_id.to_string()))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    /// Structural checks plus existence and exact size of every file.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for s in &self.subjects {
            check_file_size(&self.resolve(&s.eeg_path), s.shape)?;
        }
        for t in &self.video_tracks {
            check_file_size(&self.resolve(&t.path), t.shape)?;
        }
        Ok(())
    }

    pub fn validate_structure(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate subject `{}`", s.subject_id)));
            }
            if !(s.fs > 0.0) {
                return Err(Error::Manifest(format!("subject `{}` has fs {}", s.subject_id, s.fs)));
            }
        }
        for t in &self.video_tracks {
            if !(t.fps > 0.0) {
                return Err(Error::Manifest(format!("track `{}` has fps {}", t.track_id, t.fps)));
            }
        }
        self.split.check_disjoint()?;
        for id in self.split.train.iter().chain(&self.split.val).chain(&self.split.test) {
            if !ids.contains(id.as_str()) {
                return Err(Error::Manifest(format!("split references unknown subject `{id}`")));
            }
        }
        if let Some(names) = &self.channel_names {
            if let Some(s) = self.subjects.iter().find(|s| s.shape[0] != names.len()) {
                return Err(Error::Manifest(format!(
                    "subject `{}` has {} channels but the montage lists {}",
                    s.subject_id,
                    s.shape[0],
                    names.len()
                )));
            }
        }
        Ok(())
    }
}

fn check_file_size(path: &Path, shape: [usize; 2]) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let expected = (shape[0] * shape[1] * 4) as u64;
    if meta.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: meta.len(),
        });
    }
    Ok(())
}

pub fn load_recording(manifest: &DatasetManifest, subject_id: &str) -> Result<EegRecording> {
    let entry = manifest.subject(subject_id)?;
    let data = load_array(manifest.resolve(&entry.eeg_path), entry.shape[0], entry.shape[1])?;
    let rec = EegRecording {
        subject_id: entry.subject_id.clone(),
        channel_names: manifest.channel_names(),
        fs: entry.fs,
        data,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn load_track(manifest: &DatasetManifest, track_id: &str) -> Result<VideoFeatureTrack> {
    let entry = manifest.track(track_id)?;
    let features = load_array(manifest.resolve(&entry.path), entry.shape[0], entry.shape[1])?;
    VideoFeatureTrack::new(entry.track_id.clone(), entry.fps, features)
}

/// The corpus's single stimulus track.
pub fn load_primary_track(manifest: &DatasetManifest) -> Result<VideoFeatureTrack> {
    let entry = manifest
        .video_tracks
        .first()
        .ok_or_else(|| Error::Manifest("no video tracks".into()))?;
    load_track(manifest, &entry.track_id.clone())
}

/// Writes a recording's array under `dir` and returns its manifest entry
/// (path relative to `dir`).
pub fn write_recording(dir: &Path, rec: &EegRecording) -> Result<SubjectEntry> {
    let rel = format!("eeg/{}.f32", rec.subject_id);
    save_array(dir.join(&rel), rec.data.view())?;
    Ok(SubjectEntry {
        subject_id: rec.subject_id.clone(),
        eeg_path: rel,
        shape: [rec.n_channels(), rec.n_samples()],
        fs: rec.fs,
    })
}

pub fn write_track(dir: &Path, track: &VideoFeatureTrack) -> Result<TrackEntry> {
    let rel = format!("video/{}.f32", track.track_id);
    save_array(dir.join(&rel), track.features.view())?;
    Ok(TrackEntry {
        track_id: track.track_id.clone(),
        path: rel,
        shape: [track.feature_dim(), track.n_frames()],
        fps: track.fps,
    })
}
