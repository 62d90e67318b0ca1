//! Dual-branch match-vs-mismatch networks.
//!
//! An EEG branch and a (weight-shared) video branch each map their input to a
//! `[T × feature_dim]` sequence. Per feature channel, the cosine similarity
//! over time between the EEG and a video sequence forms the head input; a
//! fully connected layer and a sigmoid give the probability that port a holds
//! the matching video (two-way), or that the single video matches (one-way).

mod batch;
mod checkpoint;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    Conv1d, Ctx, Gru, Lstm, Module, Param, Relu, Scalar, Seq, TransformerConfig, TransformerStack, bce_with_logit,
    sigmoid,
};

pub use batch::{Batch, Corpus};
pub use checkpoint::{
    CHECKPOINT_BIN, CHECKPOINT_JSON, CheckpointMeta, TensorEntry, config_hash, load_checkpoint, load_checkpoint_meta,
    save_checkpoint,
};
pub use spec::{LayerKind, LayerSpec, MatchMode, ModelSpec};

/// Input geometry and layer hyper-parameters not carried by the spec string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub eeg_channels: usize,
    pub eeg_len: usize,
    pub video_dim: usize,
    pub video_len: usize,
    pub dilated_kernel: usize,
    /// Temporal strides of the dilated layers, per branch; layers beyond the
    /// list use stride 1.
    pub eeg_dilated_strides: Vec<usize>,
    pub video_dilated_strides: Vec<usize>,
    /// Overrides the spec's feature dimension (small test models).
    pub feature_dim: Option<usize>,
    pub transformer: TransformerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            eeg_channels: 64,
            eeg_len: 3000,
            video_dim: 768,
            video_len: 75,
            dilated_kernel: 5,
            eeg_dilated_strides: vec![5, 4, 2],
            video_dilated_strides: vec![1, 1, 1],
            feature_dim: None,
            transformer: TransformerConfig::default(),
        }
    }
}

/// A stack of layers. Optionally keeps the activation entering layer `tap`
/// and, after a backward pass, the gradient with respect to it.
pub struct Branch<S: Scalar> {
    pub layers: Vec<Box<dyn Module<S>>>,
    pub names: Vec<String>,
    tap: Option<usize>,
    tap_act: Option<Seq<S>>,
    tap_grad: Option<Seq<S>>,
}

impl<S: Scalar> Branch<S> {
    pub fn forward(&mut self, x: &Seq<S>, ctx: &mut Ctx) -> Seq<S> {
        let mut h = x.clone();
        self.tap_act = None;
        self.tap_grad = None;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if self.tap == Some(i) {
                self.tap_act = Some(h.clone());
            }
            h = layer.forward(&h, ctx);
        }
        h
    }

    /// Backward through every layer; returns the input gradient when asked.
    pub fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let need = i > 0 || need_input_grad || self.tap == Some(0);
            let next = self.layers[i].backward(&g, need)?;
            g = next;
            if self.tap == Some(i) {
                self.tap_grad = Some(g.clone());
            }
        }
        need_input_grad.then_some(g)
    }

    pub fn set_tap(&mut self, tap: Option<usize>) {
        self.tap = tap;
        self.tap_act = None;
        self.tap_grad = None;
    }

    /// Activation and gradient at the tap from the last forward/backward.
    pub fn take_tap(&mut self) -> Option<(Seq<S>, Seq<S>)> {
        Some((self.tap_act.take()?, self.tap_grad.take()?))
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn clear(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear());
        self.tap_act = None;
        self.tap_grad = None;
    }
}

/// Kernel of a `C` layer that reduces `len` to `target`.
fn conv_kernel(len: usize, target: usize) -> Option<usize> {
    (target > 0 && len >= target && len % target == 0).then(|| len / target)
}

struct Stack<'a, S> {
    prefix: &'a str,
    modules: Vec<Box<dyn Module<S>>>,
    names: Vec<String>,
    c: usize,
    len: usize,
}

impl<S: Scalar> Stack<'_, S> {
    fn next_name(&self) -> String {
        format!("{}.{}", self.prefix, self.names.len())
    }

    fn push(&mut self, m: Box<dyn Module<S>>, name: String) -> Result<()> {
        self.len = m.out_len(self.len);
        self.c = m.out_channels(self.c);
        if self.len == 0 {
            return Err(Error::IncompatibleBranches(format!("{name} leaves no time steps")));
        }
        self.modules.push(m);
        self.names.push(name);
        Ok(())
    }
}

/// Builds one branch; returns it with its output `(channels, length)`.
///
/// `C` reduces the time axis to `target_len` with kernel = stride, unless it
/// precedes `D`, in which case it is a channel-preserving point-wise
/// convolution. Dilated layer `n` uses dilation `k^n`, padding
/// `⌊((k−1)·k^n + 1)/2⌋`, the `n`-th configured stride and a ReLU.
#[allow(clippy::too_many_arguments)]
pub fn build_branch<S: Scalar>(
    prefix: &str,
    layers: &[LayerSpec],
    in_channels: usize,
    in_len: usize,
    target_len: usize,
    feature_dim: usize,
    dilated_strides: &[usize],
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Branch<S>, usize, usize)> {
    let mut st = Stack {
        prefix,
        modules: Vec::new(),
        names: Vec::new(),
        c: in_channels,
        len: in_len,
    };
    let incompatible = |what: String| Error::IncompatibleBranches(format!("{prefix} branch: {what}"));
    for (ti, token) in layers.iter().enumerate() {
        let next_is_dilated = layers.get(ti + 1).is_some_and(|l| l.kind == LayerKind::Dilated);
        match token.kind {
            LayerKind::Conv => {
                let name = st.next_name();
                let conv = if next_is_dilated {
                    Conv1d::new(&name, st.c, st.c, 1, 1, 1, 0, rng)
                } else {
                    let len = st.len;
                    let k = conv_kernel(len, target_len).ok_or_else(|| {
                        incompatible(format!("convolution cannot map length {len} onto {target_len}"))
                    })?;
                    Conv1d::new(&name, st.c, feature_dim, k, k, 1, 0, rng)
                };
                st.push(Box::new(conv), name)?;
            }
            LayerKind::Dilated => {
                let k = config.dilated_kernel;
                for n in 0..token.count {
                    let dilation = k.pow(n as u32);
                    let padding = ((k - 1) * dilation + 1) / 2;
                    let stride = dilated_strides.get(n).copied().unwrap_or(1);
                    let name = st.next_name();
                    let conv = Conv1d::new(&name, st.c, feature_dim, k, stride, dilation, padding, rng);
                    st.push(Box::new(conv), name)?;
                    let name = st.next_name();
                    st.push(Box::new(Relu::new()), name)?;
                }
            }
            LayerKind::Gru | LayerKind::Lstm => {
                for _ in 0..token.count {
                    let name = st.next_name();
                    let m: Box<dyn Module<S>> = if token.kind == LayerKind::Gru {
                        Box::new(Gru::new(&name, st.c, feature_dim, rng))
                    } else {
                        Box::new(Lstm::new(&name, st.c, feature_dim, rng))
                    };
                    st.push(m, name)?;
                }
            }
            LayerKind::Transformer => {
                let name = st.next_name();
                let m = TransformerStack::new(&name, st.c, feature_dim, token.count, &config.transformer, rng);
                st.push(Box::new(m), name)?;
            }
        }
    }
    let (c, len) = (st.c, st.len);
    if len != target_len || c != feature_dim {
        return Err(incompatible(format!(
            "output is {c} channels × {len} steps, expected {feature_dim} × {target_len}"
        )));
    }
    Ok((
        Branch {
            layers: st.modules,
            names: st.names,
            tap: None,
            tap_act: None,
            tap_grad: None,
        },
        c,
        len,
    ))
}

/// Per-channel cosine similarity over time between `[t, f]` slices; zero
/// norms give 0.
pub fn cosine_head<S: Scalar>(e: &[S], v: &[S], t: usize, f: usize) -> Vec<S> {
    assert_eq!(e.len(), t * f);
    assert_eq!(v.len(), t * f);
    let stats = cosine_stats(e, v, t, f);
    stats.into_iter().map(|s| s.cos).collect()
}

#[derive(Debug, Clone, Copy)]
struct CosStat<S> {
    ne: S,
    nv: S,
    cos: S,
}

fn cosine_stats<S: Scalar>(e: &[S], v: &[S], t: usize, f: usize) -> Vec<CosStat<S>> {
    let mut dot = vec![S::zero(); f];
    let mut ee = vec![S::zero(); f];
    let mut vv = vec![S::zero(); f];
    for ti in 0..t {
        let er = &e[ti * f..(ti + 1) * f];
        let vr = &v[ti * f..(ti + 1) * f];
        for j in 0..f {
            dot[j] += er[j] * vr[j];
            ee[j] += er[j] * er[j];
            vv[j] += vr[j] * vr[j];
        }
    }
    (0..f)
        .map(|j| {
            let (ne, nv) = (ee[j].sqrt(), vv[j].sqrt());
            let cos = if ne > S::zero() && nv > S::zero() {
                (dot[j] / (ne * nv)).max(-S::one()).min(S::one())
            } else {
                S::zero()
            };
            CosStat { ne, nv, cos }
        })
        .collect()
}

/// Adds `g·∂cos/∂e` to `de` and `g·∂cos/∂v` to `dv`.
fn cosine_backward<S: Scalar>(e: &[S], v: &[S], stats: &[CosStat<S>], g: &[S], de: &mut [S], dv: &mut [S], f: usize) {
    for ((er, vr), (der, dvr)) in e
        .chunks(f)
        .zip(v.chunks(f))
        .zip(de.chunks_mut(f).zip(dv.chunks_mut(f)))
    {
        for j in 0..f {
            let s = stats[j];
            if s.ne <= S::zero() || s.nv <= S::zero() {
                continue;
            }
            let inv = S::one() / (s.ne * s.nv);
            der[j] += g[j] * (vr[j] * inv - s.cos * er[j] / (s.ne * s.ne));
            dvr[j] += g[j] * (er[j] * inv - s.cos * vr[j] / (s.nv * s.nv));
        }
    }
}

struct HeadCache<S> {
    e: Seq<S>,
    v: Seq<S>,
    port_a: Vec<usize>,
    port_b: Option<Vec<usize>>,
    features: Vec<S>,
    stats_a: Vec<Vec<CosStat<S>>>,
    stats_b: Vec<Vec<CosStat<S>>>,
}

/// The full network.
pub struct MatchModel<S: Scalar> {
    pub spec: ModelSpec,
    pub config: ModelConfig,
    pub eeg: Branch<S>,
    pub video: Branch<S>,
    pub fc_weight: Param<S>,
    pub fc_bias: Param<S>,
    pub feature_dim: usize,
    pub t_out: usize,
    cache: Option<HeadCache<S>>,
}

impl<S: Scalar> MatchModel<S> {
    pub fn new(spec: &ModelSpec, config: &ModelConfig, seed: u64) -> Result<Self> {
        let f = config.feature_dim.unwrap_or(spec.feature_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (eeg, _, t_eeg) = build_branch(
            "eeg",
            &spec.eeg_branch,
            config.eeg_channels,
            config.eeg_len,
            config.video_len,
            f,
            &config.eeg_dilated_strides,
            config,
            &mut rng,
        )?;
        let (video, _, t_video) = build_branch(
            "video",
            &spec.video_branch,
            config.video_dim,
            config.video_len,
            config.video_len,
            f,
            &config.video_dilated_strides,
            config,
            &mut rng,
        )?;
        if t_eeg != t_video {
            return Err(Error::IncompatibleBranches(format!("EEG gives {t_eeg} steps, video {t_video}")));
        }
        let n_in = if spec.is_two_way() { 2 * f } else { f };
        let bound = 1.0 / (n_in as f64).sqrt();
        Ok(Self {
            spec: spec.clone(),
            config: config.clone(),
            eeg,
            video,
            fc_weight: Param::uniform("fc.weight", vec![n_in], bound, &mut rng),
            fc_bias: Param::uniform("fc.bias", vec![1], bound, &mut rng),
            feature_dim: f,
            t_out: t_eeg,
            cache: None,
        })
    }

    pub fn two_way(&self) -> bool {
        self.spec.is_two_way()
    }

    /// Logits for a batch. Videos are run once per distinct window.
    pub fn forward(&mut self, batch: &Batch<S>, ctx: &mut Ctx) -> Result<Vec<S>> {
        batch.validate(&self.config, self.two_way())?;
        let e = self.eeg.forward(&batch.eeg, ctx);
        let v = self.video.forward(&batch.videos, ctx);
        let (t, f) = (self.t_out, self.feature_dim);
        let n_in = self.fc_weight.len();
        let b = batch.len();
        let mut features = vec![S::zero(); b * n_in];
        let mut stats_a = Vec::with_capacity(b);
        let mut stats_b = Vec::new();
        for i in 0..b {
            let sa = cosine_stats(e.sample(i), v.sample(batch.port_a[i]), t, f);
            for (j, s) in sa.iter().enumerate() {
                features[i * n_in + j] = s.cos;
            }
            stats_a.push(sa);
            if let Some(pb) = &batch.port_b {
                let sb = cosine_stats(e.sample(i), v.sample(pb[i]), t, f);
                for (j, s) in sb.iter().enumerate() {
                    features[i * n_in + f + j] = s.cos;
                }
                stats_b.push(sb);
            }
        }
        let logits = (0..b)
            .map(|i| {
                let row = &features[i * n_in..(i + 1) * n_in];
                row.iter().zip(&self.fc_weight.value).map(|(x, w)| *x * *w).sum::<S>() + self.fc_bias.value[0]
            })
            .collect();
        self.cache = Some(HeadCache {
            e,
            v,
            port_a: batch.port_a.clone(),
            port_b: batch.port_b.clone(),
            features,
            stats_a,
            stats_b,
        });
        Ok(logits)
    }

    /// Backpropagates `d loss / d logit`; returns the EEG input gradient when
    /// asked.
    pub fn backward(&mut self, dlogits: &[S], need_eeg_grad: bool) -> Option<Seq<S>> {
        let c = self.cache.take().expect("backward before forward");
        let (f, n_in) = (self.feature_dim, self.fc_weight.len());
        let mut de = Seq::zeros(c.e.b, c.e.t, c.e.c);
        let mut dv = Seq::zeros(c.v.b, c.v.t, c.v.c);
        for (i, &g) in dlogits.iter().enumerate() {
            let feats = &c.features[i * n_in..(i + 1) * n_in];
            for j in 0..n_in {
                self.fc_weight.grad[j] += g * feats[j];
            }
            self.fc_bias.grad[0] += g;
            let dfeat: Vec<S> = self.fc_weight.value.iter().map(|w| *w * g).collect();
            let ports = std::iter::once((c.port_a[i], &c.stats_a[i], &dfeat[..f]))
                .chain(c.port_b.as_ref().map(|pb| (pb[i], &c.stats_b[i], &dfeat[f..])));
            for (vi, stats, gf) in ports {
                let n = c.e.t * f;
                let (de_i, dv_i) = (&mut de.data[i * n..(i + 1) * n], &mut dv.data[vi * n..(vi + 1) * n]);
                cosine_backward(c.e.sample(i), c.v.sample(vi), stats, gf, de_i, dv_i, f);
            }
        }
        self.video.backward(&dv, false);
        self.eeg.backward(&de, need_eeg_grad)
    }

    /// Mean binary cross-entropy and its gradient with respect to the logits.
    pub fn loss_grad(logits: &[S], labels: &[f32]) -> (f64, Vec<S>) {
        let n = logits.len().max(1) as f64;
        let mut loss = 0.0;
        let grad = logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| {
                let y = S::from_f32(y);
                loss += bce_with_logit(z, y).as_f64();
                (sigmoid(z) - y) / S::lit(n)
            })
            .collect();
        (loss / n, grad)
    }

    /// Probabilities in eval mode.
    pub fn predict(&mut self, batch: &Batch<S>) -> Result<Vec<f64>> {
        let logits = self.forward(batch, &mut Ctx::eval())?;
        self.clear();
        Ok(logits.into_iter().map(|z| sigmoid(z).as_f64()).collect())
    }

    /// EEG branch output per sample, flattened `[t·f]`, in eval mode.
    pub fn eeg_embedding(&mut self, eeg: &Seq<S>) -> Seq<S> {
        let out = self.eeg.forward(eeg, &mut Ctx::eval());
        self.eeg.clear();
        Seq::from_vec(out.b, 1, out.t * out.c, out.data)
    }

    /// Layer index whose input Grad-CAM attributes: the point-wise
    /// convolution's output for dilated EEG branches, otherwise the raw EEG.
    pub fn gradcam_tap(&self) -> usize {
        let b = &self.spec.eeg_branch;
        if b.len() > 1 && b[0].kind == LayerKind::Conv && b[1].kind == LayerKind::Dilated {
            1
        } else {
            0
        }
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut out = self.eeg.params();
        out.extend(self.video.params());
        out.push(&self.fc_weight);
        out.push(&self.fc_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out = self.eeg.params_mut();
        out.extend(self.video.params_mut());
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn clear(&mut self) {
        self.eeg.clear();
        self.video.clear();
        self.cache = None;
    }

    /// Copies parameter values (not optimizer state) from `other`.
    pub fn copy_weights_from(&mut self, other: &MatchModel<S>) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value.copy_from_slice(&src.value);
        }
    }

    pub fn weights(&self) -> Vec<Vec<S>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_weights(&mut self, weights: &[Vec<S>]) {
        for (p, w) in self.params_mut().into_iter().zip(weights) {
            p.value.copy_from_slice(w);
        }
    }
}
