//! Match-vs-mismatch decoding of video stimuli from EEG.
//!
//! The crate covers the whole pipeline: raw-array persistence and dataset
//! manifests ([`io`]), EEG conditioning ([`preprocess`]), segment and imposter
//! sampling ([`sampling`]), the dual-branch network family ([`model`]) on top
//! of a small CPU training engine ([`nn`]), the training protocol
//! ([`training`]), post-hoc analyses ([`analysis`]) and a synthetic corpus
//! generator with a planted stimulus response ([`synth`]).

pub mod analysis;
pub mod data;
pub mod error;
pub mod io;
pub mod model;
pub mod montage;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod training;

pub use data::{EegRecording, SegmentRef, TrialSample, VideoFeatureTrack};
pub use error::{Error, Result};
pub use io::{DatasetManifest, SplitSpec};
