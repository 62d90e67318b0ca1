//! A small CPU training engine: layers with hand-written backward passes.
//!
//! Activations are batches of sequences stored time-major per sample
//! (`[batch, time, channels]`, channels contiguous). Every layer caches what
//! its backward pass needs during `forward`; `backward` consumes the output
//! gradient, accumulates parameter gradients and optionally returns the input
//! gradient. Everything is generic over [`Scalar`] so gradient checks can run
//! in `f64`.

mod act;
mod conv;
mod gemm;
mod linear;
mod optim;
mod recurrent;
mod transformer;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use act::Relu;
pub use conv::Conv1d;
pub use gemm::{GemmScalar, matmul};
pub use linear::Linear;
pub use optim::{Adam, AdamConfig};
pub use recurrent::{Gru, Lstm};
pub use transformer::{LayerNorm, TransformerConfig, TransformerStack};

pub trait Scalar:
    Float + GemmScalar + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Sum + Send + Sync + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_f32(self) -> f32;
    fn from_f32(x: f32) -> Self;
}

impl Scalar for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x
    }
}

impl Scalar for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
}

/// A batch of sequences, `[b, t, c]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq<S> {
    pub b: usize,
    pub t: usize,
    pub c: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Seq<S> {
    pub fn zeros(b: usize, t: usize, c: usize) -> Self {
        Self {
            b,
            t,
            c,
            data: vec![S::zero(); b * t * c],
        }
    }

    pub fn from_vec(b: usize, t: usize, c: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), b * t * c, "sequence buffer does not match [{b}, {t}, {c}]");
        Self { b, t, c, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.b, self.t, self.c)
    }

    pub fn rows(&self) -> usize {
        self.b * self.t
    }

    /// Sample `i` as a `[t, c]` slice.
    pub fn sample(&self, i: usize) -> &[S] {
        let n = self.t * self.c;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [S] {
        let n = self.t * self.c;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn at(&self, b: usize, t: usize, c: usize) -> S {
        self.data[(b * self.t + t) * self.c + c]
    }

    /// `[b, t, c]` → `[t, b, c]` (and back, applied to the transposed shape).
    pub fn swap_bt(&self) -> Self {
        let mut out = Self::zeros(self.t, self.b, self.c);
        for bi in 0..self.b {
            for ti in 0..self.t {
                let src = (bi * self.t + ti) * self.c;
                let dst = (ti * self.b + bi) * self.c;
                out.data[dst..dst + self.c].copy_from_slice(&self.data[src..src + self.c]);
            }
        }
        out
    }

    /// Samples `idx` of `self`, in that order.
    pub fn gather(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.t, self.c);
        for (o, &i) in idx.iter().enumerate() {
            out.sample_mut(o).copy_from_slice(self.sample(i));
        }
        out
    }

    /// Adds sample `o` of `src` into sample `idx[o]` of `self`.
    pub fn scatter_add(&mut self, idx: &[usize], src: &Self) {
        for (o, &i) in idx.iter().enumerate() {
            for (d, s) in self.sample_mut(i).iter_mut().zip(src.sample(o)) {
                *d += *s;
            }
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            b: self.b,
            t: self.t,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Seq<T> {
        Seq {
            b: self.b,
            t: self.t,
            c: self.c,
            data: self.data.iter().map(|&v| T::lit(v.as_f64())).collect(),
        }
    }
}

/// A trainable tensor with its gradient and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
    pub m: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<S>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len());
        Self {
            name: name.into(),
            shape,
            grad: vec![S::zero(); n],
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            value,
        }
    }

    /// Uniform in `±bound`.
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| S::lit(rng.random_range(-bound..=bound))).collect();
        Self::new(name, shape, value)
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Self::new(name, shape, vec![S::lit(v); n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }
}

/// Forward-pass context: training mode and the dropout stream.
pub struct Ctx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(rng: ChaCha8Rng) -> Self {
        Self { train: true, rng }
    }
}

pub trait Module<S: Scalar>: Send + Sync {
    fn forward(&mut self, x: &Seq<S>, ctx: &mut Ctx) -> Seq<S>;
    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>>;
    fn params(&self) -> Vec<&Param<S>>;
    fn params_mut(&mut self) -> Vec<&mut Param<S>>;
    fn out_len(&self, t_in: usize) -> usize;
    fn out_channels(&self, c_in: usize) -> usize;
    /// Drops cached activations.
    fn clear(&mut self) {}
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_with_logit<S: Scalar>(logit: S, label: S) -> S {
    logit.max(S::zero()) - logit * label + (-logit.abs()).exp().ln_1p()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::SeedableRng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_seq(b: usize, t: usize, c: usize, seed: u64) -> Seq<f64> {
        let mut r = rng(seed);
        Seq::from_vec(b, t, c, (0..b * t * c).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    /// Loss `Σ w ⊙ f(x)` with fixed random weights `w`, so every output
    /// element gets a distinct gradient.
    fn weighted_sum(y: &Seq<f64>, w: &[f64]) -> f64 {
        y.data.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Central-difference check of input and parameter gradients.
    pub fn check_gradients<M: Module<f64>>(m: &mut M, x: &Seq<f64>, tol: f64) {
        let mut ctx = Ctx::eval();
        let y = m.forward(x, &mut ctx);
        let mut r = rng(99);
        let w: Vec<f64> = (0..y.data.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let dy = Seq::from_vec(y.b, y.t, y.c, w.clone());
        m.params_mut().into_iter().for_each(|p| p.zero_grad());
        let dx = m.backward(&dy, true).expect("input gradient");
        let analytic_params: Vec<Vec<f64>> = m.params().iter().map(|p| p.grad.clone()).collect();

        let h = 1e-6;
        let loss = |m: &mut M, x: &Seq<f64>| weighted_sum(&m.forward(x, &mut Ctx::eval()), &w);
        let compare = |what: &str, a: f64, n: f64| {
            // exact zeros (e.g. shift-invariant biases) leave only rounding noise
            let err = (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
            assert!(err < tol || (a - n).abs() < 1e-8, "{what}: analytic {a} numeric {n} (rel {err})");
        };
        let step = (x.data.len() / 40).max(1);
        for i in (0..x.data.len()).step_by(step) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (loss(m, &xp) - loss(m, &xm)) / (2.0 * h);
            compare(&format!("input {i}"), dx.data[i], num);
        }
        for (pi, grads) in analytic_params.iter().enumerate() {
            let n = grads.len();
            let step = (n / 25).max(1);
            for j in (0..n).step_by(step) {
                let orig = m.params()[pi].value[j];
                m.params_mut()[pi].value[j] = orig + h;
                let lp = loss(m, x);
                m.params_mut()[pi].value[j] = orig - h;
                let lm = loss(m, x);
                m.params_mut()[pi].value[j] = orig;
                let name = m.params()[pi].name.clone();
                compare(&format!("{name}[{j}]"), grads[j], (lp - lm) / (2.0 * h));
            }
        }
    }
}
