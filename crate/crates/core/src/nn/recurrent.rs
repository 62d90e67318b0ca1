//! GRU and LSTM layers (gate layouts as in the common deep-learning
//! frameworks), run over time with a zero initial state and returning the
//! hidden state at every step.

use rand_chacha::ChaCha8Rng;

use super::{Ctx, Module, Param, Scalar, Seq, matmul, sigmoid};

/// Input-side gate pre-activations for all steps at once: `[t·b, g·h]`.
fn input_gates<S: Scalar>(xt: &Seq<S>, w_ih: &Param<S>, b_ih: &Param<S>) -> Vec<S> {
    let (rows, ci, co) = (xt.rows(), w_ih.shape[0], w_ih.shape[1]);
    let mut gi = Vec::with_capacity(rows * co);
    for _ in 0..rows {
        gi.extend_from_slice(&b_ih.value);
    }
    matmul(false, false, rows, ci, co, S::one(), &xt.data, &w_ih.value, S::one(), &mut gi);
    gi
}

/// Parameter gradients shared by both cells, from gate pre-activation
/// gradients `da_in` (input side) and `da_h` (recurrent side), both
/// `[t·b, g·h]`; returns the input gradient `[b, t, in]` when asked.
#[allow(clippy::too_many_arguments)]
fn accumulate<S: Scalar>(
    xt: &Seq<S>,
    hs: &[S],
    da_in: &[S],
    da_h: &[S],
    w_ih: &mut Param<S>,
    w_hh: &mut Param<S>,
    b_ih: &mut Param<S>,
    b_hh: &mut Param<S>,
    need_input_grad: bool,
) -> Option<Seq<S>> {
    let (rows, ci, g) = (xt.rows(), w_ih.shape[0], w_ih.shape[1]);
    let h = w_hh.shape[0];
    matmul(true, false, ci, rows, g, S::one(), &xt.data, da_in, S::one(), &mut w_ih.grad);
    // hs[0..T] are the states each step started from
    matmul(true, false, h, rows, g, S::one(), &hs[..rows * h], da_h, S::one(), &mut w_hh.grad);
    for r in 0..rows {
        for j in 0..g {
            b_ih.grad[j] += da_in[r * g + j];
            b_hh.grad[j] += da_h[r * g + j];
        }
    }
    need_input_grad.then(|| {
        let mut dx = vec![S::zero(); rows * ci];
        matmul(false, true, rows, g, ci, S::one(), da_in, &w_ih.value, S::zero(), &mut dx);
        Seq::from_vec(xt.b, xt.t, ci, dx).swap_bt()
    })
}

fn recurrent_params<S: Scalar>(name: &str, c_in: usize, hidden: usize, gates: usize, rng: &mut ChaCha8Rng) -> [Param<S>; 4] {
    let bound = 1.0 / (hidden as f64).sqrt();
    [
        Param::uniform(format!("{name}.weight_ih"), vec![c_in, gates * hidden], bound, rng),
        Param::uniform(format!("{name}.weight_hh"), vec![hidden, gates * hidden], bound, rng),
        Param::uniform(format!("{name}.bias_ih"), vec![gates * hidden], bound, rng),
        Param::uniform(format!("{name}.bias_hh"), vec![gates * hidden], bound, rng),
    ]
}

#[derive(Debug, Clone)]
struct GruCache<S> {
    xt: Seq<S>,
    /// States `h_0 … h_T`, `[(t+1)·b, h]`.
    hs: Vec<S>,
    r: Vec<S>,
    z: Vec<S>,
    n: Vec<S>,
    /// `W_hn·h + b_hn` per step.
    ghn: Vec<S>,
}

/// `r, z, n` gates; `h' = (1 − z)·n + z·h`.
#[derive(Debug, Clone)]
pub struct Gru<S> {
    pub w_ih: Param<S>,
    pub w_hh: Param<S>,
    pub b_ih: Param<S>,
    pub b_hh: Param<S>,
    pub hidden: usize,
    cache: Option<GruCache<S>>,
}

impl<S: Scalar> Gru<S> {
    pub fn new(name: &str, c_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let [w_ih, w_hh, b_ih, b_hh] = recurrent_params(name, c_in, hidden, 3, rng);
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            hidden,
            cache: None,
        }
    }
}

impl<S: Scalar> Module<S> for Gru<S> {
    fn forward(&mut self, x: &Seq<S>, _ctx: &mut Ctx) -> Seq<S> {
        assert_eq!(x.c, self.w_ih.shape[0], "GRU expects {} input channels", self.w_ih.shape[0]);
        let (b, t, h) = (x.b, x.t, self.hidden);
        let xt = x.swap_bt();
        let gi = input_gates(&xt, &self.w_ih, &self.b_ih);
        let bh = b * h;
        let mut hs = vec![S::zero(); (t + 1) * bh];
        let (mut r, mut z, mut n, mut ghn) = (vec![S::zero(); t * bh], vec![S::zero(); t * bh], vec![S::zero(); t * bh], vec![S::zero(); t * bh]);
        let mut gh = vec![S::zero(); b * 3 * h];
        for step in 0..t {
            for bi in 0..b {
                gh[bi * 3 * h..(bi + 1) * 3 * h].copy_from_slice(&self.b_hh.value);
            }
            let (prev, next) = hs.split_at_mut((step + 1) * bh);
            let prev = &prev[step * bh..];
            matmul(false, false, b, h, 3 * h, S::one(), prev, &self.w_hh.value, S::one(), &mut gh);
            let gi_t = &gi[step * b * 3 * h..(step + 1) * b * 3 * h];
            for bi in 0..b {
                let gi_b = &gi_t[bi * 3 * h..(bi + 1) * 3 * h];
                let gh_b = &gh[bi * 3 * h..(bi + 1) * 3 * h];
                for j in 0..h {
                    let o = step * bh + bi * h + j;
                    let rj = sigmoid(gi_b[j] + gh_b[j]);
                    let zj = sigmoid(gi_b[h + j] + gh_b[h + j]);
                    let nj = (gi_b[2 * h + j] + rj * gh_b[2 * h + j]).tanh();
                    r[o] = rj;
                    z[o] = zj;
                    n[o] = nj;
                    ghn[o] = gh_b[2 * h + j];
                    next[bi * h + j] = (S::one() - zj) * nj + zj * prev[bi * h + j];
                }
            }
        }
        let out = Seq::from_vec(t, b, h, hs[bh..].to_vec()).swap_bt();
        self.cache = Some(GruCache { xt, hs, r, z, n, ghn });
        out
    }

    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        let c = self.cache.take().expect("backward before forward");
        let (b, t, h) = (dy.b, dy.t, self.hidden);
        let bh = b * h;
        let g = 3 * h;
        let dyt = dy.swap_bt();
        let mut da_in = vec![S::zero(); t * b * g];
        let mut da_h = vec![S::zero(); t * b * g];
        let mut dh = vec![S::zero(); bh];
        let mut dh_prev = vec![S::zero(); bh];
        for step in (0..t).rev() {
            for (d, &y) in dh.iter_mut().zip(&dyt.data[step * bh..(step + 1) * bh]) {
                *d += y;
            }
            let prev = &c.hs[step * bh..(step + 1) * bh];
            for bi in 0..b {
                for j in 0..h {
                    let o = step * bh + bi * h + j;
                    let (rj, zj, nj) = (c.r[o], c.z[o], c.n[o]);
                    let d = dh[bi * h + j];
                    let dn = d * (S::one() - zj);
                    let dz = d * (prev[bi * h + j] - nj);
                    let dan = dn * (S::one() - nj * nj);
                    let dar = dan * c.ghn[o] * rj * (S::one() - rj);
                    let daz = dz * zj * (S::one() - zj);
                    let row = (step * b + bi) * g;
                    da_in[row + j] = dar;
                    da_in[row + h + j] = daz;
                    da_in[row + 2 * h + j] = dan;
                    da_h[row + j] = dar;
                    da_h[row + h + j] = daz;
                    da_h[row + 2 * h + j] = dan * rj;
                    dh_prev[bi * h + j] = d * zj;
                }
            }
            let da_h_t = &da_h[step * b * g..(step + 1) * b * g];
            matmul(false, true, b, g, h, S::one(), da_h_t, &self.w_hh.value, S::one(), &mut dh_prev);
            std::mem::swap(&mut dh, &mut dh_prev);
        }
        let dx = accumulate(
            &c.xt,
            &c.hs,
            &da_in,
            &da_h,
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.b_ih,
            &mut self.b_hh,
            need_input_grad,
        );
        self.cache = Some(c);
        dx
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }

    fn out_len(&self, t_in: usize) -> usize {
        t_in
    }

    fn out_channels(&self, _c_in: usize) -> usize {
        self.hidden
    }

    fn clear(&mut self) {
        self.cache = None;
    }
}

#[derive(Debug, Clone)]
struct LstmCache<S> {
    xt: Seq<S>,
    hs: Vec<S>,
    cs: Vec<S>,
    /// Post-activation gates `i, f, g, o`, `[t·b, 4h]`.
    gates: Vec<S>,
}

/// `i, f, g, o` gates; `c' = f·c + i·g`, `h' = o·tanh(c')`.
#[derive(Debug, Clone)]
pub struct Lstm<S> {
    pub w_ih: Param<S>,
    pub w_hh: Param<S>,
    pub b_ih: Param<S>,
    pub b_hh: Param<S>,
    pub hidden: usize,
    cache: Option<LstmCache<S>>,
}

impl<S: Scalar> Lstm<S> {
    pub fn new(name: &str, c_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let [w_ih, w_hh, b_ih, b_hh] = recurrent_params(name, c_in, hidden, 4, rng);
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            hidden,
            cache: None,
        }
    }
}

impl<S: Scalar> Module<S> for Lstm<S> {
    fn forward(&mut self, x: &Seq<S>, _ctx: &mut Ctx) -> Seq<S> {
        assert_eq!(x.c, self.w_ih.shape[0], "LSTM expects {} input channels", self.w_ih.shape[0]);
        let (b, t, h) = (x.b, x.t, self.hidden);
        let g = 4 * h;
        let bh = b * h;
        let xt = x.swap_bt();
        let mut gates = input_gates(&xt, &self.w_ih, &self.b_ih);
        let mut hs = vec![S::zero(); (t + 1) * bh];
        let mut cs = vec![S::zero(); (t + 1) * bh];
        for step in 0..t {
            let gt = &mut gates[step * b * g..(step + 1) * b * g];
            for bi in 0..b {
                for (v, &bias) in gt[bi * g..(bi + 1) * g].iter_mut().zip(&self.b_hh.value) {
                    *v += bias;
                }
            }
            let (prev, next) = hs.split_at_mut((step + 1) * bh);
            let prev = &prev[step * bh..];
            matmul(false, false, b, h, g, S::one(), prev, &self.w_hh.value, S::one(), gt);
            for bi in 0..b {
                let row = &mut gt[bi * g..(bi + 1) * g];
                for j in 0..h {
                    let i = sigmoid(row[j]);
                    let f = sigmoid(row[h + j]);
                    let gg = row[2 * h + j].tanh();
                    let o = sigmoid(row[3 * h + j]);
                    row[j] = i;
                    row[h + j] = f;
                    row[2 * h + j] = gg;
                    row[3 * h + j] = o;
                    let cell = f * cs[step * bh + bi * h + j] + i * gg;
                    cs[(step + 1) * bh + bi * h + j] = cell;
                    next[bi * h + j] = o * cell.tanh();
                }
            }
        }
        let out = Seq::from_vec(t, b, h, hs[bh..].to_vec()).swap_bt();
        self.cache = Some(LstmCache { xt, hs, cs, gates });
        out
    }

    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        let c = self.cache.take().expect("backward before forward");
        let (b, t, h) = (dy.b, dy.t, self.hidden);
        let g = 4 * h;
        let bh = b * h;
        let dyt = dy.swap_bt();
        let mut da = vec![S::zero(); t * b * g];
        let mut dh = vec![S::zero(); bh];
        let mut dc = vec![S::zero(); bh];
        for step in (0..t).rev() {
            for (d, &y) in dh.iter_mut().zip(&dyt.data[step * bh..(step + 1) * bh]) {
                *d += y;
            }
            for bi in 0..b {
                let row = (step * b + bi) * g;
                for j in 0..h {
                    let k = bi * h + j;
                    let (i, f, gg, o) = (
                        c.gates[row + j],
                        c.gates[row + h + j],
                        c.gates[row + 2 * h + j],
                        c.gates[row + 3 * h + j],
                    );
                    let tc = c.cs[(step + 1) * bh + k].tanh();
                    let dcell = dc[k] + dh[k] * o * (S::one() - tc * tc);
                    da[row + j] = dcell * gg * i * (S::one() - i);
                    da[row + h + j] = dcell * c.cs[step * bh + k] * f * (S::one() - f);
                    da[row + 2 * h + j] = dcell * i * (S::one() - gg * gg);
                    da[row + 3 * h + j] = dh[k] * tc * o * (S::one() - o);
                    dc[k] = dcell * f;
                }
            }
            let da_t = &da[step * b * g..(step + 1) * b * g];
            matmul(false, true, b, g, h, S::one(), da_t, &self.w_hh.value, S::zero(), &mut dh);
        }
        let dx = accumulate(
            &c.xt,
            &c.hs,
            &da,
            &da,
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.b_ih,
            &mut self.b_hh,
            need_input_grad,
        );
        self.cache = Some(c);
        dx
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }

    fn out_len(&self, t_in: usize) -> usize {
        t_in
    }

    fn out_channels(&self, _c_in: usize) -> usize {
        self.hidden
    }

    fn clear(&mut self) {
        self.cache = None;
    }
}
