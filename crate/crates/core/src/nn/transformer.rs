//! Post-norm transformer encoder with single-head self-attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ctx, Linear, Module, Param, Scalar, Seq, matmul};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub ff_dim: usize,
    pub dropout: f64,
    pub ln_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            ff_dim: 2048,
            dropout: 0.2,
            ln_eps: 1e-5,
        }
    }
}

/// Inverted dropout; the mask holds `0` or `1/(1−p)`.
#[derive(Debug, Clone)]
struct Dropout<S> {
    p: f64,
    mask: Option<Vec<S>>,
}

impl<S: Scalar> Dropout<S> {
    fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    fn forward(&mut self, x: &mut [S], ctx: &mut Ctx) {
        if !ctx.train || self.p <= 0.0 {
            self.mask = None;
            return;
        }
        let keep = S::lit(1.0 / (1.0 - self.p));
        let mask: Vec<S> = (0..x.len())
            .map(|_| if ctx.rng.random::<f64>() < self.p { S::zero() } else { keep })
            .collect();
        x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        self.mask = Some(mask);
    }

    fn backward(&self, dy: &mut [S]) {
        if let Some(mask) = &self.mask {
            dy.iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
        }
    }
}

/// Normalization over channels at every time step.
#[derive(Debug, Clone)]
pub struct LayerNorm<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    eps: f64,
    xhat: Vec<S>,
    rstd: Vec<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), vec![dim], 1.0),
            beta: Param::filled(format!("{name}.beta"), vec![dim], 0.0),
            eps,
            xhat: Vec::new(),
            rstd: Vec::new(),
        }
    }

    pub fn forward_rows(&mut self, x: &[S]) -> Vec<S> {
        let d = self.gamma.len();
        let rows = x.len() / d;
        let inv_d = S::lit(1.0 / d as f64);
        self.xhat = vec![S::zero(); x.len()];
        self.rstd = vec![S::zero(); rows];
        let mut y = vec![S::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let rstd = S::one() / (var + S::lit(self.eps)).sqrt();
            self.rstd[r] = rstd;
            for j in 0..d {
                let xh = (row[j] - mean) * rstd;
                self.xhat[r * d + j] = xh;
                y[r * d + j] = xh * self.gamma.value[j] + self.beta.value[j];
            }
        }
        y
    }

    pub fn backward_rows(&mut self, dy: &[S]) -> Vec<S> {
        let d = self.gamma.len();
        let rows = dy.len() / d;
        let inv_d = S::lit(1.0 / d as f64);
        let mut dx = vec![S::zero(); dy.len()];
        for r in 0..rows {
            let (mut m1, mut m2) = (S::zero(), S::zero());
            for j in 0..d {
                let i = r * d + j;
                self.gamma.grad[j] += dy[i] * self.xhat[i];
                self.beta.grad[j] += dy[i];
                let g = dy[i] * self.gamma.value[j];
                m1 += g;
                m2 += g * self.xhat[i];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for j in 0..d {
                let i = r * d + j;
                dx[i] = self.rstd[r] * (dy[i] * self.gamma.value[j] - m1 - self.xhat[i] * m2);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
struct LayerCache<S> {
    x: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// Softmax weights before dropout, `[b, t, t]`.
    attn: Vec<S>,
    /// Attention weights after dropout.
    attn_d: Vec<S>,
    o: Vec<S>,
    x1: Vec<S>,
    h: Vec<S>,
    h_d: Vec<S>,
}

/// `x1 = LN(x + drop(SA(x)))`, `y = LN(x1 + drop(FF(x1)))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer<S> {
    wq: Linear<S>,
    wk: Linear<S>,
    wv: Linear<S>,
    wo: Linear<S>,
    ff1: Linear<S>,
    ff2: Linear<S>,
    ln1: LayerNorm<S>,
    ln2: LayerNorm<S>,
    drop_attn: Dropout<S>,
    drop_sa: Dropout<S>,
    drop_ff: Dropout<S>,
    drop_out: Dropout<S>,
    dim: usize,
    cache: LayerCache<S>,
    shape: (usize, usize),
}

impl<S: Scalar> EncoderLayer<S> {
    fn new(name: &str, dim: usize, cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: Linear::new(&format!("{name}.attn.q"), dim, dim, rng),
            wk: Linear::new(&format!("{name}.attn.k"), dim, dim, rng),
            wv: Linear::new(&format!("{name}.attn.v"), dim, dim, rng),
            wo: Linear::new(&format!("{name}.attn.out"), dim, dim, rng),
            ff1: Linear::new(&format!("{name}.ff1"), dim, cfg.ff_dim, rng),
            ff2: Linear::new(&format!("{name}.ff2"), cfg.ff_dim, dim, rng),
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim, cfg.ln_eps),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim, cfg.ln_eps),
            drop_attn: Dropout::new(cfg.dropout),
            drop_sa: Dropout::new(cfg.dropout),
            drop_ff: Dropout::new(cfg.dropout),
            drop_out: Dropout::new(cfg.dropout),
            dim,
            cache: LayerCache::default(),
            shape: (0, 0),
        }
    }

    fn forward(&mut self, x: &[S], b: usize, t: usize, ctx: &mut Ctx) -> Vec<S> {
        let d = self.dim;
        let rows = b * t;
        let q = self.wq.apply_rows(x, rows);
        let k = self.wk.apply_rows(x, rows);
        let v = self.wv.apply_rows(x, rows);
        let scale = S::lit(1.0 / (d as f64).sqrt());
        let mut attn = vec![S::zero(); b * t * t];
        for bi in 0..b {
            let s = &mut attn[bi * t * t..(bi + 1) * t * t];
            let qs = &q[bi * t * d..(bi + 1) * t * d];
            let ks = &k[bi * t * d..(bi + 1) * t * d];
            matmul(false, true, t, d, t, scale, qs, ks, S::zero(), s);
            for row in s.chunks_mut(t) {
                let m = row.iter().copied().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        let mut attn_d = attn.clone();
        self.drop_attn.forward(&mut attn_d, ctx);
        let mut o = vec![S::zero(); rows * d];
        for bi in 0..b {
            matmul(
                false,
                false,
                t,
                t,
                d,
                S::one(),
                &attn_d[bi * t * t..(bi + 1) * t * t],
                &v[bi * t * d..(bi + 1) * t * d],
                S::zero(),
                &mut o[bi * t * d..(bi + 1) * t * d],
            );
        }
        let mut sa = self.wo.apply_rows(&o, rows);
        self.drop_sa.forward(&mut sa, ctx);
        let res1: Vec<S> = x.iter().zip(&sa).map(|(a, b)| *a + *b).collect();
        let x1 = self.ln1.forward_rows(&res1);

        let mut h = self.ff1.apply_rows(&x1, rows);
        h.iter_mut().for_each(|v| *v = v.max(S::zero()));
        let mut h_d = h.clone();
        self.drop_ff.forward(&mut h_d, ctx);
        let mut f = self.ff2.apply_rows(&h_d, rows);
        self.drop_out.forward(&mut f, ctx);
        let res2: Vec<S> = x1.iter().zip(&f).map(|(a, b)| *a + *b).collect();
        let y = self.ln2.forward_rows(&res2);

        self.shape = (b, t);
        self.cache = LayerCache {
            x: x.to_vec(),
            q,
            k,
            v,
            attn,
            attn_d,
            o,
            x1,
            h,
            h_d,
        };
        y
    }

    fn backward(&mut self, dy: &[S]) -> Vec<S> {
        let (b, t) = self.shape;
        let d = self.dim;
        let rows = b * t;
        let c = std::mem::take(&mut self.cache);

        let dres2 = self.ln2.backward_rows(dy);
        let mut df = dres2.clone();
        self.drop_out.backward(&mut df);
        let mut dh = self.ff2.backward_rows(&c.h_d, &df, rows, true).unwrap();
        self.drop_ff.backward(&mut dh);
        for (g, &hv) in dh.iter_mut().zip(&c.h) {
            if hv <= S::zero() {
                *g = S::zero();
            }
        }
        let dx1_ff = self.ff1.backward_rows(&c.x1, &dh, rows, true).unwrap();
        let dx1: Vec<S> = dres2.iter().zip(&dx1_ff).map(|(a, b)| *a + *b).collect();

        let dres1 = self.ln1.backward_rows(&dx1);
        let mut dsa = dres1.clone();
        self.drop_sa.backward(&mut dsa);
        let do_ = self.wo.backward_rows(&c.o, &dsa, rows, true).unwrap();

        let scale = S::lit(1.0 / (d as f64).sqrt());
        let mut dq = vec![S::zero(); rows * d];
        let mut dk = vec![S::zero(); rows * d];
        let mut dv = vec![S::zero(); rows * d];
        let mut da = vec![S::zero(); t * t];
        for bi in 0..b {
            let span = bi * t * d..(bi + 1) * t * d;
            let aspan = bi * t * t..(bi + 1) * t * t;
            let dob = &do_[span.clone()];
            // dV = A'ᵀ·dO, dA' = dO·Vᵀ
            matmul(true, false, t, t, d, S::one(), &c.attn_d[aspan.clone()], dob, S::zero(), &mut dv[span.clone()]);
            matmul(false, true, t, d, t, S::one(), dob, &c.v[span.clone()], S::zero(), &mut da);
            if let Some(mask) = &self.drop_attn.mask {
                da.iter_mut().zip(&mask[aspan.clone()]).for_each(|(g, m)| *g *= *m);
            }
            let a = &c.attn[aspan];
            for r in 0..t {
                let row = &mut da[r * t..(r + 1) * t];
                let arow = &a[r * t..(r + 1) * t];
                let dot: S = row.iter().zip(arow).map(|(g, p)| *g * *p).sum();
                for (g, p) in row.iter_mut().zip(arow) {
                    *g = *p * (*g - dot);
                }
            }
            matmul(false, false, t, t, d, scale, &da, &c.k[span.clone()], S::zero(), &mut dq[span.clone()]);
            matmul(true, false, t, t, d, scale, &da, &c.q[span.clone()], S::zero(), &mut dk[span]);
        }
        let mut dx = dres1;
        for (lin, g) in [(&mut self.wq, &dq), (&mut self.wk, &dk), (&mut self.wv, &dv)] {
            let part = lin.backward_rows(&c.x, g, rows, true).unwrap();
            dx.iter_mut().zip(&part).for_each(|(a, b)| *a += *b);
        }
        self.cache = c;
        dx
    }

    fn params(&self) -> Vec<&Param<S>> {
        let mut out = Vec::new();
        for l in [&self.wq, &self.wk, &self.wv, &self.wo, &self.ff1, &self.ff2] {
            out.extend([&l.weight, &l.bias]);
        }
        out.extend([&self.ln1.gamma, &self.ln1.beta, &self.ln2.gamma, &self.ln2.beta]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out = Vec::new();
        for l in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo, &mut self.ff1, &mut self.ff2] {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut self.ln1.gamma, &mut self.ln1.beta, &mut self.ln2.gamma, &mut self.ln2.beta]);
        out
    }
}

/// Optional input projection, sinusoidal positions, then `n` encoder layers.
#[derive(Debug, Clone)]
pub struct TransformerStack<S> {
    proj: Option<Linear<S>>,
    layers: Vec<EncoderLayer<S>>,
    dim: usize,
    c_in: usize,
    input: Option<Seq<S>>,
}

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(…)`.
pub fn positional_encoding(t: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; t * d];
    for pos in 0..t {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[pos * d + i] = angle.sin();
            if i + 1 < d {
                pe[pos * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

impl<S: Scalar> TransformerStack<S> {
    pub fn new(name: &str, c_in: usize, dim: usize, n_layers: usize, cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Self {
        let proj = (c_in != dim).then(|| Linear::new(&format!("{name}.proj"), c_in, dim, rng));
        let layers = (0..n_layers)
            .map(|i| EncoderLayer::new(&format!("{name}.layer{i}"), dim, cfg, rng))
            .collect();
        Self {
            proj,
            layers,
            dim,
            c_in,
            input: None,
        }
    }
}

impl<S: Scalar> Module<S> for TransformerStack<S> {
    fn forward(&mut self, x: &Seq<S>, ctx: &mut Ctx) -> Seq<S> {
        assert_eq!(x.c, self.c_in, "transformer expects {} input channels", self.c_in);
        let (b, t, d) = (x.b, x.t, self.dim);
        let mut h = match &self.proj {
            Some(p) => p.apply_rows(&x.data, x.rows()),
            None => x.data.clone(),
        };
        let pe = positional_encoding(t, d);
        for bi in 0..b {
            for (v, p) in h[bi * t * d..(bi + 1) * t * d].iter_mut().zip(&pe) {
                *v += S::lit(*p);
            }
        }
        for layer in &mut self.layers {
            h = layer.forward(&h, b, t, ctx);
        }
        self.input = Some(x.clone());
        Seq::from_vec(b, t, d, h)
    }

    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        let mut g = dy.data.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        let x = self.input.take().expect("backward before forward");
        let dx = match &mut self.proj {
            Some(p) => p.backward_rows(&x.data, &g, x.rows(), need_input_grad),
            None => need_input_grad.then_some(g),
        };
        let out = dx.map(|d| Seq::from_vec(x.b, x.t, self.c_in, d));
        self.input = Some(x);
        out
    }

    fn params(&self) -> Vec<&Param<S>> {
        let mut out = Vec::new();
        if let Some(p) = &self.proj {
            out.extend([&p.weight, &p.bias]);
        }
        for l in &self.layers {
            out.extend(l.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.proj {
            out.extend([&mut p.weight, &mut p.bias]);
        }
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out
    }

    fn out_len(&self, t_in: usize) -> usize {
        t_in
    }

    fn out_channels(&self, _c_in: usize) -> usize {
        self.dim
    }

    fn clear(&mut self) {
        self.input = None;
        for l in &mut self.layers {
            l.cache = LayerCache::default();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_gradients, random_seq, rng};

    #[test]
    fn gradients_eval_mode() {
        let cfg = TransformerConfig {
            ff_dim: 6,
            ..TransformerConfig::default()
        };
        let mut tr = TransformerStack::<f64>::new("t", 3, 4, 2, &cfg, &mut rng(1));
        check_gradients(&mut tr, &random_seq(2, 5, 3, 2), 1e-5);
    }

    #[test]
    fn layer_norm_gradients() {
        struct Wrap(LayerNorm<f64>);
        impl Module<f64> for Wrap {
            fn forward(&mut self, x: &Seq<f64>, _: &mut Ctx) -> Seq<f64> {
                Seq::from_vec(x.b, x.t, x.c, self.0.forward_rows(&x.data))
            }
            fn backward(&mut self, dy: &Seq<f64>, _: bool) -> Option<Seq<f64>> {
                Some(Seq::from_vec(dy.b, dy.t, dy.c, self.0.backward_rows(&dy.data)))
            }
            fn params(&self) -> Vec<&Param<f64>> {
                vec![&self.0.gamma, &self.0.beta]
            }
            fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
                vec![&mut self.0.gamma, &mut self.0.beta]
            }
            fn out_len(&self, t: usize) -> usize {
                t
            }
            fn out_channels(&self, c_in: usize) -> usize {
                c_in
            }
        }
        let mut ln = Wrap(LayerNorm::new("ln", 5, 1e-5));
        ln.0.gamma.value = vec![0.5, 1.5, -1.0, 2.0, 1.0];
        check_gradients(&mut ln, &random_seq(2, 3, 5, 3), 1e-5);
    }

    #[test]
    fn dropout_is_train_only_and_seeded() {
        let cfg = TransformerConfig {
            ff_dim: 8,
            ..TransformerConfig::default()
        };
        let mut tr = TransformerStack::<f64>::new("t", 4, 4, 1, &cfg, &mut rng(2));
        let x = random_seq(1, 6, 4, 5);
        let a = tr.forward(&x, &mut Ctx::eval());
        let b = tr.forward(&x, &mut Ctx::eval());
        assert_eq!(a, b);
        let t1 = tr.forward(&x, &mut Ctx::train(rng(7)));
        let t2 = tr.forward(&x, &mut Ctx::train(rng(7)));
        assert_eq!(t1, t2);
        assert_ne!(t1, a);
    }

    #[test]
    fn sinusoid_table() {
        let pe = positional_encoding(3, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[7] - (1.0 / 100.0f64).cos()).abs() < 1e-15);
    }
}
