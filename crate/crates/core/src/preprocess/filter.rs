//! IIR filter design and zero-phase filtering in second-order sections.

use std::f64::consts::PI;

use num_traits::Zero;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_PAD: usize = 20_000;

/// One biquad, `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Direct-form-II-transposed state reached after a long unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[1] * y]
    }

    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Effective filter order (twice the section count).
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn magnitude_at(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(2.0 * PI * freq_hz / fs).norm()
    }

    /// Per-section initial states for a unit-step steady state.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal filtering in place from the given states.
    fn run(&self, x: &mut [f64], states: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(states.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            let (mut z1, mut z2) = (z[0], z[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
            *z = [z1, z2];
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut states = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut y, &mut states);
        y
    }

    /// Number of samples until the impulse response has decayed below
    /// 1e-3 of its peak (capped at `cap`).
    pub fn ringing_len(&self, cap: usize) -> usize {
        let mut impulse = vec![0.0; cap];
        impulse[0] = 1.0;
        let h = self.filter(&impulse);
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        h.iter().rposition(|v| v.abs() > 1e-3 * peak).map_or(1, |i| i + 1)
    }

    /// Minimum signal length accepted by [`Sos::filtfilt`].
    pub fn min_len(&self) -> usize {
        3 * self.order() + 1
    }

    /// Zero-phase forward-backward filtering.
    ///
    /// The signal is extended at both ends by odd reflection about its end
    /// samples, as far as the impulse response rings (at most `n − 1`
    /// samples), and each pass starts from the step steady state scaled by
    /// the first sample it sees.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < self.min_len() {
            return Err(Error::Filter(format!(
                "signal of {n} samples is shorter than the {} sample minimum",
                self.min_len()
            )));
        }
        let pad = self.ringing_len(MAX_PAD).max(3 * self.order()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_states();
        let scaled = |x0: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect() };

        let mut states = scaled(ext[0]);
        self.run(&mut ext, &mut states);
        ext.reverse();
        let mut states = scaled(ext[0]);
        self.run(&mut ext, &mut states);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Second-order IIR notch at `f0` with quality factor `q` (−3 dB width
/// `f0 / q`).
pub fn iir_notch(f0: f64, q: f64, fs: f64) -> Result<Sos> {
    if !(fs > 2.0 * f0) || !(f0 > 0.0) {
        return Err(Error::Filter(format!("notch at {f0} Hz needs fs > {}, got {fs}", 2.0 * f0)));
    }
    if !(q > 0.0) {
        return Err(Error::Filter(format!("notch quality must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let bw = w0 / q;
    let gain = 1.0 / (1.0 + (bw / 2.0).tan());
    let c = w0.cos();
    Ok(Sos {
        sections: vec![Biquad {
            b: [gain, -2.0 * gain * c, gain],
            a: [-2.0 * gain * c, 2.0 * gain - 1.0],
        }],
    })
}

/// Butterworth band-pass of prototype order `order` (the digital filter has
/// order `2·order`), designed by the bilinear transform with prewarping.
pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::Filter("filter order must be positive".into()));
    }
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::Filter(format!(
            "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo} hi={hi} fs={fs}"
        )));
    }
    let k = 2.0 * fs;
    let w_lo = k * (PI * lo / fs).tan();
    let w_hi = k * (PI * hi / fs).tan();
    let bw = w_hi - w_lo;
    let w0 = (w_lo * w_hi).sqrt();

    // Analog prototype poles in the left half plane, mapped low-pass →
    // band-pass and then through the bilinear transform.
    let mut poles = Vec::with_capacity(2 * order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            poles.push((k + s) / (k - s));
        }
    }

    let sections = pair_conjugates(&poles)
        .into_iter()
        .map(|(p1, p2)| {
            let sum = p1 + p2;
            let prod = p1 * p2;
            Biquad {
                // one zero at z = 1 and one at z = −1 per section
                b: [1.0, 0.0, -1.0],
                a: [-sum.re, prod.re],
            }
        })
        .collect::<Vec<_>>();

    let mut sos = Sos { sections };
    let wc = 2.0 * (w0 / k).atan();
    let g = sos.response(wc).norm();
    for v in sos.sections[0].b.iter_mut() {
        *v /= g;
    }
    Ok(sos)
}

/// Groups digital poles into conjugate pairs (reals are paired with each
/// other).
fn pair_conjugates(poles: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    const TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > TOL).collect();
    complex.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    let mut reals: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= TOL).map(|p| p.re).collect();
    reals.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out: Vec<(Complex64, Complex64)> = complex.into_iter().map(|p| (p, p.conj())).collect();
    for chunk in reals.chunks(2) {
        let second = chunk.get(1).copied().unwrap_or(0.0);
        out.push((Complex64::new(chunk[0], 0.0), Complex64::new(second, 0.0)));
    }
    if out.is_empty() {
        out.push((Complex64::zero(), Complex64::zero()));
    }
    out
}
