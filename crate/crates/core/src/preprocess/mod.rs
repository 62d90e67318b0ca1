//! EEG conditioning: power-line notch, broad band-pass, amplitude
//! normalization, applied in that order.

pub mod filter;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::EegRecording;
use crate::error::{Error, Result};

pub use filter::{Biquad, Sos, butter_bandpass, iir_notch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub notch_hz: f64,
    pub notch_q: f64,
    pub bp_lo_hz: f64,
    pub bp_hi_hz: f64,
    /// Prototype order of the Butterworth band-pass.
    pub bp_order: usize,
    pub norm_target: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            notch_hz: 50.0,
            notch_q: 30.0,
            bp_lo_hz: 1.0,
            bp_hi_hz: 200.0,
            bp_order: 4,
            norm_target: 0.8,
        }
    }
}

/// Runs `sos` forward-backward over every channel (row) independently.
pub fn filter_channels(data: ArrayView2<f32>, sos: &Sos) -> Result<Array2<f32>> {
    let mut out = Array2::<f32>::zeros(data.raw_dim());
    let mut buf = Vec::with_capacity(data.ncols());
    for (src, mut dst) in data.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        buf.clear();
        buf.extend(src.iter().map(|&v| v as f64));
        let y = sos.filtfilt(&buf)?;
        for (d, v) in dst.iter_mut().zip(y) {
            *d = v as f32;
        }
    }
    Ok(out)
}

/// Zero-phase IIR notch at `f0` Hz.
pub fn notch_filter(data: ArrayView2<f32>, fs: f64, f0: f64, q: f64) -> Result<Array2<f32>> {
    let sos = iir_notch(f0, q, fs)?;
    filter_channels(data, &sos)
}

/// Zero-phase Butterworth band-pass between `lo` and `hi` Hz.
pub fn bandpass_filter(data: ArrayView2<f32>, fs: f64, lo: f64, hi: f64, order: usize) -> Result<Array2<f32>> {
    let sos = butter_bandpass(order, lo, hi, fs)?;
    filter_channels(data, &sos)
}

/// Scales the whole recording by one factor so its peak magnitude equals
/// `target`. Inter-channel amplitude ratios are preserved.
pub fn normalize_amplitude(data: ArrayView2<f32>, target: f64) -> Result<Array2<f32>> {
    let mut peak = 0.0f64;
    for &v in data.iter() {
        if !v.is_finite() {
            return Err(Error::Degenerate("non-finite sample before normalization".into()));
        }
        peak = peak.max((v as f64).abs());
    }
    if peak == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let scale = target / peak;
    Ok(data.mapv(|v| (v as f64 * scale) as f32))
}

pub fn preprocess_recording(rec: &EegRecording, cfg: &PreprocessConfig) -> Result<EegRecording> {
    let notched = notch_filter(rec.data.view(), rec.fs, cfg.notch_hz, cfg.notch_q)?;
    let band = bandpass_filter(notched.view(), rec.fs, cfg.bp_lo_hz, cfg.bp_hi_hz, cfg.bp_order)?;
    let data = normalize_amplitude(band.view(), cfg.norm_target)?;
    Ok(EegRecording {
        subject_id: rec.subject_id.clone(),
        channel_names: rec.channel_names.clone(),
        fs: rec.fs,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::{FftPlanner, num_complex::Complex};
    use std::f64::consts::PI;

    const FS: f64 = 1000.0;

    fn sine(freq: f64, amp: f64, n: usize) -> Vec<f32> {
        (0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / FS).sin()) as f32).collect()
    }

    fn row(x: Vec<f32>) -> Array2<f32> {
        let n = x.len();
        Array2::from_shape_vec((1, n), x).unwrap()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// FFT magnitude at the bin nearest `freq`, over the central half of the
    /// signal so edge effects do not leak in.
    fn bin_magnitude(x: &[f32], freq: f64) -> f64 {
        let n = x.len() / 2;
        let start = x.len() / 4;
        let mut buf: Vec<Complex<f64>> =
            x[start..start + n].iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (freq * n as f64 / FS).round() as usize;
        buf[k].norm()
    }

    #[test]
    fn notch_kills_50hz() {
        let x = row(sine(50.0, 1.0, 8000));
        let y = notch_filter(x.view(), FS, 50.0, 30.0).unwrap();
        let (xi, yi) = (x.row(0).to_vec(), y.row(0).to_vec());
        assert!(rms(&yi[2000..6000]) <= 0.1 * rms(&xi[2000..6000]));
    }

    #[test]
    fn notch_keeps_10hz() {
        let x = row(sine(10.0, 1.0, 8000));
        let y = notch_filter(x.view(), FS, 50.0, 30.0).unwrap();
        let ratio = rms(&y.row(0).to_vec()) / rms(&x.row(0).to_vec());
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn zero_in_zero_out() {
        let x = Array2::<f32>::zeros((3, 2000));
        assert_eq!(notch_filter(x.view(), FS, 50.0, 30.0).unwrap(), x);
        assert_eq!(bandpass_filter(x.view(), FS, 1.0, 200.0, 4).unwrap(), x);
    }

    #[test]
    fn notch_invalid_rate() {
        let x = Array2::<f32>::zeros((1, 2000));
        assert!(matches!(notch_filter(x.view(), 90.0, 50.0, 30.0), Err(Error::Filter(_))));
    }

    #[test]
    fn bandpass_removes_dc_offset() {
        let x = row(vec![5.0; 10_000]);
        let y = bandpass_filter(x.view(), FS, 1.0, 200.0, 4).unwrap();
        let mean = y.row(0).iter().map(|&v| v as f64).sum::<f64>() / 10_000.0;
        assert!(mean.abs() <= 0.05, "{mean}");
    }

    #[test]
    fn bandpass_multisine_stopbands() {
        // 50 components: 48 in the passband, one at 0.1 Hz, one at 400 Hz
        let n = 40_000;
        let mut freqs: Vec<f64> = (1..=48).map(|k| 2.0 * k as f64).collect();
        freqs.push(0.1);
        freqs.push(400.0);
        let x: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                freqs.iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect();
        let y = bandpass_filter(row(x.clone()).view(), FS, 1.0, 200.0, 4).unwrap();
        let y = y.row(0).to_vec();
        for f in [400.0] {
            let att = 20.0 * (bin_magnitude(&y, f) / bin_magnitude(&x, f)).log10();
            assert!(att <= -20.0, "{f} Hz: {att} dB");
        }
        // 0.1 Hz does not land on a bin of the 20 s window; probe by projection
        let probe = |s: &[f32]| -> f64 {
            let (mut c, mut q) = (0.0, 0.0);
            for (i, &v) in s.iter().enumerate().skip(10_000).take(20_000) {
                let ph = 2.0 * PI * 0.1 * i as f64 / FS;
                c += v as f64 * ph.cos();
                q += v as f64 * ph.sin();
            }
            (c * c + q * q).sqrt()
        };
        let att = 20.0 * (probe(&y) / probe(&x)).log10();
        assert!(att <= -20.0, "0.1 Hz: {att} dB");
        for f in [10.0, 40.0, 90.0] {
            let g = 20.0 * (bin_magnitude(&y, f) / bin_magnitude(&x, f)).log10();
            assert!(g.abs() <= 1.0, "{f} Hz: {g} dB");
        }
    }

    #[test]
    fn normalize_examples() {
        let x = ndarray::arr2(&[[1.0f32, -4.0], [2.0, 3.0]]);
        let y = normalize_amplitude(x.view(), 0.8).unwrap();
        assert!((y[[0, 1]] + 0.8).abs() < 1e-7);
        assert!((y[[0, 0]] - 0.2).abs() < 1e-7);
        let z = normalize_amplitude(y.view(), 0.8).unwrap();
        assert!(y.iter().zip(z.iter()).all(|(a, b)| (a - b).abs() < 1e-7));
        assert!(matches!(
            normalize_amplitude(Array2::<f32>::zeros((2, 2)).view(), 0.8),
            Err(Error::ZeroSignal)
        ));
    }

    #[test]
    fn zero_phase_lag() {
        // band-limited noise: lag of the peak cross-correlation must be 0
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let white: Vec<f32> = (0..6000).map(|_| rng.random::<f32>() - 0.5).collect();
        let x = bandpass_filter(row(white).view(), FS, 5.0, 40.0, 4).unwrap();
        let y = bandpass_filter(x.view(), FS, 1.0, 200.0, 4).unwrap();
        let (x, y) = (x.row(0).to_vec(), y.row(0).to_vec());
        let xc = |lag: i64| -> f64 {
            (1000..5000).map(|i| x[i] as f64 * y[(i as i64 + lag) as usize] as f64).sum()
        };
        let best = (-50..=50).max_by(|&a, &b| xc(a).partial_cmp(&xc(b)).unwrap()).unwrap();
        assert_eq!(best, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn filters_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1500;
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            for sos in [butter_bandpass(4, 1.0, 200.0, FS).unwrap(), iir_notch(50.0, 30.0, FS).unwrap()] {
                let fx = sos.filtfilt(&x).unwrap();
                let fy = sos.filtfilt(&y).unwrap();
                let fm = sos.filtfilt(&mix).unwrap();
                let scale = fm.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                for i in 0..n {
                    let lin = a * fx[i] + b * fy[i];
                    prop_assert!((fm[i] - lin).abs() <= 1e-6 * scale);
                }
            }
        }

        #[test]
        fn normalization_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((4, 50), |_| rng.random::<f32>() - 0.5);
            let cx = x.mapv(|v| (v as f64 * c) as f32);
            let nx = normalize_amplitude(x.view(), 0.8).unwrap();
            let ncx = normalize_amplitude(cx.view(), 0.8).unwrap();
            for (p, q) in nx.iter().zip(ncx.iter()) {
                prop_assert!((p - q).abs() <= 1e-6);
            }
            let peak = nx.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            prop_assert!((peak - 0.8).abs() <= 1e-6);
        }
    }

    #[test]
    fn recording_pipeline_removes_artifact_and_normalizes() {
        let n = 20_000;
        let mut data = Array2::<f32>::zeros((64, n));
        for (c, mut r) in data.axis_iter_mut(Axis(0)).enumerate() {
            let base = sine(10.0 + c as f64 * 0.1, 1.0, n);
            let hum = sine(50.0, 2.0, n);
            r.assign(&Array1::from_iter(base.iter().zip(&hum).map(|(a, b)| a + b)));
        }
        let rec = EegRecording::new("s", FS, data).unwrap();
        let out = preprocess_recording(&rec, &PreprocessConfig::default()).unwrap();
        let before = bin_magnitude(&rec.data.row(0).to_vec(), 50.0);
        let after = bin_magnitude(&out.data.row(0).to_vec(), 50.0);
        // compare relative to the 10 Hz line to factor out the global scale
        let rel_before = before / bin_magnitude(&rec.data.row(0).to_vec(), 10.0);
        let rel_after = after / bin_magnitude(&out.data.row(0).to_vec(), 10.0);
        assert!(20.0 * (rel_after / rel_before).log10() <= -20.0);
        let peak = out.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.8).abs() < 1e-6);
    }

    #[test]
    fn recording_pipeline_sine_amplitude() {
        let n = 10_000;
        let mut data = Array2::<f32>::zeros((64, n));
        for mut r in data.axis_iter_mut(Axis(0)) {
            r.assign(&Array1::from(sine(10.0, 3.0, n)));
        }
        let rec = EegRecording::new("s", FS, data).unwrap();
        let out = preprocess_recording(&rec, &PreprocessConfig::default()).unwrap();
        // peak of the steady-state middle section
        let mid = out.data.row(5).to_vec();
        let peak = mid[2000..8000].iter().fold(0.0f32, |m, v| m.max(v.abs()));
        // edge ringing of the 1 Hz high-pass costs a few percent of the global peak
        assert!((peak - 0.8).abs() < 0.04, "{peak}");
        assert!(matches!(
            preprocess_recording(&EegRecording::new("z", FS, Array2::zeros((64, n))).unwrap(), &PreprocessConfig::default()),
            Err(Error::ZeroSignal)
        ));
    }
}
