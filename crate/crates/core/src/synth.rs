//! Synthetic corpora with a planted, delayed stimulus response.
//!
//! A shared feature track drives every subject:
//!
//! ```text
//! eeg_s = M_s · (h ∗ up(P · features)) + noise + confound_s
//! ```
//!
//! `P` projects the 768 features onto a few latents, `up` interpolates them
//! to the EEG rate, `h` is a delayed gamma kernel and `M_s` places the drive on
//! a fixed electrode subset with subject-specific jitter. Noise is pink, and
//! the confound is a per-subject alpha oscillation with its own frequency,
//! amplitude and scalp pattern.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::{EegRecording, VIDEO_FEATURE_DIM, VideoFeatureTrack};
use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest, MANIFEST_FILE};
use crate::montage::{self, N_CHANNELS};
use crate::rng::rng_for;
use crate::sampling::split_ids;

/// Band in which `snr` is measured (the default preprocessing passband).
pub const SNR_BAND_HZ: (f64, f64) = (1.0, 200.0);

const STREAM_TRACK: u64 = 1;
const STREAM_PROJECTION: u64 = 2;
const STREAM_MIXING: u64 = 3;
const STREAM_SUBJECT: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub fps: f64,
    pub latent_dim: usize,
    pub response_latency_s: f64,
    pub response_kernel_s: f64,
    /// Stimulus-to-noise power ratio on the stimulus electrodes, within
    /// [`SNR_BAND_HZ`]. Infinity switches noise off.
    pub snr: f64,
    pub subject_confound_strength: f64,
    /// Electrodes carrying the stimulus response.
    pub stimulus_channels: Vec<String>,
    /// Relative size of the per-subject perturbation of the mixing matrix.
    pub mixing_jitter: f64,
    pub ar_coef: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            duration_s: 210.0,
            fs: 1000.0,
            fps: 25.0,
            latent_dim: 8,
            response_latency_s: 0.2,
            response_kernel_s: 0.5,
            snr: 1.0,
            subject_confound_strength: 1.0,
            stimulus_channels: ["PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz", "O2"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            mixing_jitter: 0.2,
            ar_coef: 0.97,
            n_train: 7,
            n_val: 1,
            n_test: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration_s", self.duration_s),
            ("fs", self.fs),
            ("fps", self.fps),
            ("response_kernel_s", self.response_kernel_s),
            ("snr", self.snr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_subjects == 0 || self.latent_dim == 0 {
            return Err(Error::Config("n_subjects and latent_dim must be positive".into()));
        }
        if !(self.response_latency_s >= 0.0 && self.subject_confound_strength >= 0.0 && self.mixing_jitter >= 0.0) {
            return Err(Error::Config("latency, confound strength and jitter must be non-negative".into()));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return Err(Error::Config(format!("ar_coef must lie in (-1, 1), got {}", self.ar_coef)));
        }
        let ratio = self.fs / self.fps;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("fs ({}) must be a multiple of fps ({})", self.fs, self.fps)));
        }
        let frames = self.duration_s * self.fps;
        if (frames - frames.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("duration_s ({}) must be a whole number of frames", self.duration_s)));
        }
        if self.n_train + self.n_val + self.n_test > self.n_subjects {
            return Err(Error::InsufficientSubjects {
                needed: self.n_train + self.n_val + self.n_test,
                available: self.n_subjects,
            });
        }
        if SNR_BAND_HZ.1 >= self.fs / 2.0 {
            return Err(Error::Config(format!("fs ({}) too low for the {:?} Hz snr band", self.fs, SNR_BAND_HZ)));
        }
        self.stimulus_channel_indices().map(|_| ())
    }

    pub fn stimulus_channel_indices(&self) -> Result<Vec<usize>> {
        if self.stimulus_channels.is_empty() {
            return Err(Error::Config("stimulus_channels is empty".into()));
        }
        let names = montage::canonical_names();
        self.stimulus_channels
            .iter()
            .map(|name| {
                montage::channel_index(&names, name).ok_or_else(|| Error::Config(format!("unknown electrode `{name}`")))
            })
            .collect()
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    pub fn subject_id(index: usize) -> String {
        format!("sub-{:02}", index + 1)
    }
}

/// AR(1) rows with unit stationary variance.
pub fn generate_track(cfg: &SynthConfig) -> Result<VideoFeatureTrack> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, STREAM_TRACK);
    let frames = cfg.n_frames();
    let a = cfg.ar_coef;
    let innov = (1.0 - a * a).sqrt();
    let mut features = Array2::<f32>::zeros((VIDEO_FEATURE_DIM, frames));
    for mut row in features.rows_mut() {
        let mut x: f64 = rng.sample(StandardNormal);
        for v in row.iter_mut() {
            *v = x as f32;
            let e: f64 = rng.sample(StandardNormal);
            x = a * x + innov * e;
        }
    }
    VideoFeatureTrack::new("video-00", cfg.fps, features)
}

/// Shape-2 gamma kernel `t·exp(−t/τ)` over `[0, kernel_s)`, with its peak at
/// a fifth of the kernel length, normalized to unit sum.
pub fn gamma_kernel(kernel_s: f64, fs: f64) -> Vec<f64> {
    let n = ((kernel_s * fs).round() as usize).max(1);
    let tau = kernel_s / 5.0;
    let mut h: Vec<f64> = (0..n)
        .map(|j| {
            let t = j as f64 / fs;
            t * (-t / tau).exp()
        })
        .collect();
    let sum: f64 = h.iter().sum();
    if sum > 0.0 {
        h.iter_mut().for_each(|v| *v /= sum);
    } else {
        h[0] = 1.0;
    }
    h
}

/// The parts of the forward model shared by all subjects.
#[derive(Debug, Clone)]
pub struct SynthModel {
    /// `[latent_dim × 768]`.
    pub projection: Array2<f64>,
    /// `[64 × latent_dim]`, zero outside the stimulus electrodes.
    pub base_mixing: Array2<f64>,
    pub kernel: Vec<f64>,
    pub latency_samples: usize,
    pub stimulus_channels: Vec<usize>,
}

impl SynthModel {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.latent_dim;
        let mut rng = rng_for(cfg.seed, STREAM_PROJECTION);
        let scale = 1.0 / (VIDEO_FEATURE_DIM as f64).sqrt();
        let projection = Array2::from_shape_simple_fn((k, VIDEO_FEATURE_DIM), || {
            scale * rng.sample::<f64, _>(StandardNormal)
        });

        let stimulus_channels = cfg.stimulus_channel_indices()?;
        let mut rng = rng_for(cfg.seed, STREAM_MIXING);
        let mut base_mixing = Array2::zeros((N_CHANNELS, k));
        let scale = 1.0 / (k as f64).sqrt();
        for &c in &stimulus_channels {
            for j in 0..k {
                base_mixing[[c, j]] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self {
            projection,
            base_mixing,
            kernel: gamma_kernel(cfg.response_kernel_s, cfg.fs),
            latency_samples: (cfg.response_latency_s * cfg.fs).round() as usize,
            stimulus_channels,
        })
    }

    /// `P · features`, `[latent_dim × frames]`.
    pub fn latents(&self, track: &VideoFeatureTrack) -> Array2<f64> {
        self.projection.dot(&track.features.mapv(f64::from))
    }

    /// Delayed, smoothed latent drive at the EEG rate, `[latent_dim × n]`.
    pub fn drive(&self, cfg: &SynthConfig, track: &VideoFeatureTrack) -> Array2<f64> {
        let z = self.latents(track);
        let n = cfg.n_samples();
        let up_factor = cfg.fs / cfg.fps;
        let mut out = Array2::zeros((z.nrows(), n));
        let mut up = vec![0.0; n];
        for (zrow, mut orow) in z.rows().into_iter().zip(out.rows_mut()) {
            let last = zrow.len() - 1;
            for (i, u) in up.iter_mut().enumerate() {
                let pos = i as f64 / up_factor;
                let f = (pos.floor() as usize).min(last);
                let frac = pos - f as f64;
                let next = (f + 1).min(last);
                *u = zrow[f] * (1.0 - frac) + zrow[next] * frac;
            }
            for (i, o) in orow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &h) in self.kernel.iter().enumerate() {
                    let src = i as isize - (self.latency_samples + j) as isize;
                    acc += h * up[src.max(0) as usize];
                }
                *o = acc;
            }
        }
        out
    }

    /// `M_s`: the shared mixing plus a subject-specific perturbation on the
    /// stimulus electrodes.
    pub fn mixing(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut m = self.base_mixing.clone();
        let scale = cfg.mixing_jitter / (cfg.latent_dim as f64).sqrt();
        for &c in &self.stimulus_channels {
            for j in 0..cfg.latent_dim {
                m[[c, j]] += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        m
    }
}

fn band_bins(n: usize, fs: f64, band: (f64, f64)) -> impl Iterator<Item = usize> {
    (1..=n / 2).filter(move |&k| {
        let f = k as f64 * fs / n as f64;
        f >= band.0 && f <= band.1
    })
}

/// Mean-square contribution of the bins in `band`, from a full complex
/// spectrum of length `n` (cross-power when `x != y`).
fn band_cross_power(x: &[Complex64], y: &[Complex64], fs: f64, band: (f64, f64)) -> f64 {
    let n = x.len();
    band_bins(n, fs, band)
        .map(|k| {
            let w = if 2 * k == n { 1.0 } else { 2.0 };
            w * (x[k] * y[k].conj()).re
        })
        .sum::<f64>()
        / (n as f64 * n as f64)
}

fn spectrum(planner: &mut FftPlanner<f64>, x: impl Iterator<Item = f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.map(|v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Band-limited cross-power matrix of the drive rows.
fn drive_band_cov(drive: ArrayView2<f64>, fs: f64) -> Array2<f64> {
    let mut planner = FftPlanner::new();
    let spectra: Vec<Vec<Complex64>> = drive.rows().into_iter().map(|r| spectrum(&mut planner, r.iter().copied())).collect();
    let k = spectra.len();
    let mut cov = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let v = band_cross_power(&spectra[i], &spectra[j], fs, SNR_BAND_HZ);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    cov
}

/// Mean band power of the stimulus on the stimulus electrodes.
fn stimulus_band_power(mixing: &Array2<f64>, cov: &Array2<f64>, channels: &[usize]) -> f64 {
    channels
        .iter()
        .map(|&c| {
            let w = mixing.row(c);
            w.dot(&cov.dot(&w))
        })
        .sum::<f64>()
        / channels.len() as f64
}

/// One channel of `1/f` noise with unit power in [`SNR_BAND_HZ`].
fn pink_noise(planner: &mut FftPlanner<f64>, rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let mut spec = spectrum(planner, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    spec[0] = Complex64::new(0.0, 0.0);
    for (k, v) in spec.iter_mut().enumerate().skip(1) {
        let bin = k.min(n - k) as f64;
        *v /= (bin * fs / n as f64).sqrt();
    }
    let power = band_cross_power(&spec, &spec, fs, SNR_BAND_HZ);
    planner.plan_fft_inverse(n).process(&mut spec);
    let scale = 1.0 / (n as f64 * power.sqrt());
    spec.iter().map(|c| c.re * scale).collect()
}

struct Shared {
    model: SynthModel,
    drive: Array2<f64>,
    cov: Array2<f64>,
    /// Band power of the stimulus under the shared mixing.
    reference_power: f64,
}

impl Shared {
    fn new(cfg: &SynthConfig, track: &VideoFeatureTrack) -> Result<Self> {
        let model = SynthModel::new(cfg)?;
        if track.n_frames() < cfg.n_frames() || track.feature_dim() != VIDEO_FEATURE_DIM {
            return Err(Error::Shape(format!(
                "track is {}×{}, config needs {}×{}",
                track.feature_dim(),
                track.n_frames(),
                VIDEO_FEATURE_DIM,
                cfg.n_frames()
            )));
        }
        let drive = model.drive(cfg, track);
        let cov = drive_band_cov(drive.view(), cfg.fs);
        let reference_power = stimulus_band_power(&model.base_mixing, &cov, &model.stimulus_channels);
        Ok(Self {
            model,
            drive,
            cov,
            reference_power,
        })
    }

    fn subject(&self, cfg: &SynthConfig, index: usize) -> Result<EegRecording> {
        let mut rng = rng_for(cfg.seed, STREAM_SUBJECT + index as u64);
        let n = cfg.n_samples();
        let mixing = self.model.mixing(cfg, &mut rng);
        let mut eeg = mixing.dot(&self.drive);

        if cfg.snr.is_finite() {
            let signal = stimulus_band_power(&mixing, &self.cov, &self.model.stimulus_channels);
            let sigma = (signal / cfg.snr).sqrt();
            let mut planner = FftPlanner::new();
            for mut row in eeg.rows_mut() {
                let noise = pink_noise(&mut planner, &mut rng, n, cfg.fs);
                row.iter_mut().zip(noise).for_each(|(v, e)| *v += sigma * e);
            }
        }

        if cfg.subject_confound_strength > 0.0 {
            let freq = rng.random_range(8.5..12.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            let gain: f64 = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
            let amplitude = cfg.subject_confound_strength * (2.0 * self.reference_power).sqrt() * gain;
            let pattern: Vec<f64> = (0..N_CHANNELS).map(|_| rng.sample(StandardNormal)).collect();
            let rms = (pattern.iter().map(|p| p * p).sum::<f64>() / N_CHANNELS as f64).sqrt();
            let wave: Vec<f64> = (0..n)
                .map(|i| amplitude * (2.0 * PI * freq * i as f64 / cfg.fs + phase).sin())
                .collect();
            for (mut row, p) in eeg.rows_mut().into_iter().zip(pattern) {
                let w = p / rms;
                row.iter_mut().zip(&wave).for_each(|(v, s)| *v += w * s);
            }
        }

        EegRecording::new(SynthConfig::subject_id(index), cfg.fs, eeg.mapv(|v| v as f32))
    }
}

/// One subject's recording under the shared forward model.
pub fn generate_subject(cfg: &SynthConfig, track: &VideoFeatureTrack, subject_index: usize) -> Result<EegRecording> {
    Shared::new(cfg, track)?.subject(cfg, subject_index)
}

/// All subjects and the track, in memory.
pub fn generate_recordings(cfg: &SynthConfig) -> Result<(Vec<EegRecording>, VideoFeatureTrack)> {
    let track = generate_track(cfg)?;
    let shared = Shared::new(cfg, &track)?;
    let recordings = (0..cfg.n_subjects)
        .map(|i| shared.subject(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((recordings, track))
}

/// Writes the track, every recording and a manifest (with a subject split
/// drawn from the config's seed) under `out_dir`.
pub fn generate_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let track = generate_track(cfg)?;
    let shared = Shared::new(cfg, &track)?;
    let mut manifest = DatasetManifest::new(out_dir);
    manifest.video_tracks.push(io::write_track(out_dir, &track)?);
    for i in 0..cfg.n_subjects {
        let rec = shared.subject(cfg, i)?;
        manifest.subjects.push(io::write_recording(out_dir, &rec)?);
    }
    manifest.split = split_ids(&manifest.subject_ids(), cfg.n_train, cfg.n_val, cfg.n_test, cfg.seed)?;
    manifest.validate()?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Per-row lag-1 autocorrelation.
pub fn lag1_autocorrelation(x: ArrayView2<f32>) -> Vec<f64> {
    x.axis_iter(Axis(0))
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
            let (mut num, mut den) = (0.0, 0.0);
            for w in row.windows(2) {
                num += (w[0] as f64 - mean) * (w[1] as f64 - mean);
            }
            for &v in row.iter() {
                den += (v as f64 - mean).powi(2);
            }
            num / den
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects: 3,
            duration_s: 20.0,
            n_train: 1,
            n_val: 1,
            n_test: 1,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn track_shape_and_determinism() {
        let cfg = SynthConfig { seed: 3, ..SynthConfig::default() };
        let a = generate_track(&cfg).unwrap();
        assert_eq!(a.features.dim(), (768, 5250));
        assert_eq!(a, generate_track(&cfg).unwrap());
        let other = generate_track(&SynthConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.features, other.features);
    }

    #[test]
    fn track_rows_are_ar1() {
        let track = generate_track(&SynthConfig { seed: 5, ..SynthConfig::default() }).unwrap();
        let rho = lag1_autocorrelation(track.features.view());
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        assert!((mean - 0.97).abs() < 0.02, "{mean}");
        // individual rows: 5250 frames of a 0.97 process give an estimator
        // spread of about 0.004 plus a small negative bias
        assert!(rho.iter().all(|r| (r - 0.97).abs() < 0.03), "{rho:?}");
        let var = track.features.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / track.features.len() as f64;
        assert!((var - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn kernel_is_normalized_gamma() {
        let h = gamma_kernel(0.5, 1000.0);
        assert_eq!(h.len(), 500);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let peak = h.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert_eq!(peak, 100);
    }

    #[test]
    fn recording_shape() {
        let cfg = short(1);
        let track = generate_track(&cfg).unwrap();
        let rec = generate_subject(&cfg, &track, 0).unwrap();
        assert_eq!(rec.data.dim(), (64, 20_000));
        rec.validate().unwrap();
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn noiseless_channel_tracks_delayed_drive() {
        let cfg = SynthConfig {
            snr: f64::INFINITY,
            subject_confound_strength: 0.0,
            ..short(2)
        };
        let track = generate_track(&cfg).unwrap();
        let rec = generate_subject(&cfg, &track, 1).unwrap();
        let model = SynthModel::new(&cfg).unwrap();
        let channel = model.stimulus_channels[0];

        // oracle: interpolate P·f frame by frame, convolve with the kernel
        // rebuilt from its formula, delay by the latency, then project with
        // the channel's mixing weights re-derived from the same stream
        let mut rng = rng_for(cfg.seed, STREAM_SUBJECT + 1);
        let w = model.mixing(&cfg, &mut rng).row(channel).to_owned();
        let frames = track.features.mapv(f64::from);
        let latent: Vec<f64> = (0..cfg.n_frames())
            .map(|t| (0..cfg.latent_dim).map(|j| w[j] * model.projection.row(j).dot(&frames.column(t))).sum())
            .collect();
        let up = |i: isize| -> f64 {
            let i = i.max(0) as f64 / 40.0;
            let f = (i.floor() as usize).min(latent.len() - 1);
            let g = (f + 1).min(latent.len() - 1);
            latent[f] + (latent[g] - latent[f]) * (i - f as f64)
        };
        let tau = 0.1;
        let raw: Vec<f64> = (0..500).map(|j| j as f64 / 1000.0 * (-(j as f64) / 1000.0 / tau).exp()).collect();
        let total: f64 = raw.iter().sum();
        let expected: Vec<f64> = (1000..19_000)
            .map(|i| raw.iter().enumerate().map(|(j, h)| h / total * up(i as isize - 200 - j as isize)).sum())
            .collect();
        let actual: Vec<f64> = (1000..19_000).map(|i| rec.data[[channel, i]] as f64).collect();
        assert!(pearson(&expected, &actual) > 0.99);

        // and the response really lags: the undelayed latent fits worse
        let undelayed: Vec<f64> = (1000..19_000).map(|i| up(i as isize)).collect();
        assert!(pearson(&undelayed, &actual) < pearson(&expected, &actual));

        // non-stimulus electrodes stay silent
        let quiet = (0..64).find(|c| !model.stimulus_channels.contains(c)).unwrap();
        assert!(rec.data.row(quiet).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snr_is_met_in_band() {
        let cfg = SynthConfig {
            snr: 0.5,
            subject_confound_strength: 0.0,
            ..short(4)
        };
        let track = generate_track(&cfg).unwrap();
        let shared = Shared::new(&cfg, &track).unwrap();
        let noisy = shared.subject(&cfg, 0).unwrap();
        let clean = shared.subject(&SynthConfig { snr: f64::INFINITY, ..cfg.clone() }, 0).unwrap();
        let mut planner = FftPlanner::new();
        let (mut s, mut e) = (0.0, 0.0);
        for &c in &shared.model.stimulus_channels {
            let sig: Vec<f64> = clean.data.row(c).iter().map(|&v| v as f64).collect();
            let noise: Vec<f64> = noisy.data.row(c).iter().zip(&sig).map(|(&v, s)| v as f64 - s).collect();
            let ss = spectrum(&mut planner, sig.into_iter());
            let ns = spectrum(&mut planner, noise.into_iter());
            s += band_cross_power(&ss, &ss, cfg.fs, SNR_BAND_HZ);
            e += band_cross_power(&ns, &ns, cfg.fs, SNR_BAND_HZ);
        }
        assert!((s / e - 0.5).abs() < 0.01, "{}", s / e);
    }

    #[test]
    fn corpus_is_byte_identical_per_seed() {
        let cfg = short(9);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(&cfg, a.path()).unwrap();
        generate_corpus(&cfg, b.path()).unwrap();
        assert_eq!(manifest.subjects.len(), 3);
        manifest.split.check_disjoint().unwrap();
        let reloaded = DatasetManifest::load(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(reloaded.split, manifest.split);
        for rel in ["manifest.json", "video/video-00.f32", "eeg/sub-01.f32", "eeg/sub-03.f32"] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            let y = std::fs::read(b.path().join(rel)).unwrap();
            assert!(x == y, "{rel} differs");
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { fs: 1010.0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { snr: 0.0, ..SynthConfig::default() }.validate().is_err());
        let bad = SynthConfig { stimulus_channels: vec!["Q9".into()], ..SynthConfig::default() };
        assert!(bad.validate().is_err());
        assert!(SynthConfig { n_subjects: 5, ..SynthConfig::default() }.validate().is_err());
        SynthConfig::default().validate().unwrap();
    }
}
