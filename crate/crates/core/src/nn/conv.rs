use rand_chacha::ChaCha8Rng;

use super::{Ctx, Module, Param, Scalar, Seq, matmul};

/// Temporal convolution over time-major sequences.
///
/// The weight is stored as `[kernel·c_in, c_out]` with row `j·c_in + c`
/// holding tap `j` of input channel `c`, so a receptive field laid out as
/// consecutive time steps is one GEMM row.
#[derive(Debug, Clone)]
pub struct Conv1d<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub c_in: usize,
    pub c_out: usize,
    cols: Option<Seq<S>>,
    t_in: usize,
}

impl<S: Scalar> Conv1d<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel > 0 && stride > 0 && dilation > 0);
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![kernel * c_in, c_out], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![c_out], bound, rng),
            kernel,
            stride,
            dilation,
            padding,
            c_in,
            c_out,
            cols: None,
            t_in: 0,
        }
    }

    /// Windows tile the input exactly, so the input already is the im2col
    /// matrix.
    fn is_tiling(&self, t_in: usize) -> bool {
        self.kernel == self.stride && self.dilation == 1 && self.padding == 0 && t_in % self.kernel == 0
    }

    fn im2col(&self, x: &Seq<S>, t_out: usize) -> Seq<S> {
        let width = self.kernel * self.c_in;
        let mut cols = Seq::zeros(x.b, t_out, width);
        for b in 0..x.b {
            let src = x.sample(b);
            let dst = cols.sample_mut(b);
            for t in 0..t_out {
                for j in 0..self.kernel {
                    let pos = (t * self.stride + j * self.dilation) as isize - self.padding as isize;
                    if pos < 0 || pos as usize >= x.t {
                        continue;
                    }
                    let p = pos as usize;
                    let d = t * width + j * self.c_in;
                    dst[d..d + self.c_in].copy_from_slice(&src[p * self.c_in..(p + 1) * self.c_in]);
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[S], b_count: usize, t_out: usize) -> Seq<S> {
        let width = self.kernel * self.c_in;
        let mut dx = Seq::zeros(b_count, self.t_in, self.c_in);
        for b in 0..b_count {
            let src = &dcols[b * t_out * width..(b + 1) * t_out * width];
            let dst = dx.sample_mut(b);
            for t in 0..t_out {
                for j in 0..self.kernel {
                    let pos = (t * self.stride + j * self.dilation) as isize - self.padding as isize;
                    if pos < 0 || pos as usize >= self.t_in {
                        continue;
                    }
                    let p = pos as usize;
                    let s = t * width + j * self.c_in;
                    for (d, v) in dst[p * self.c_in..(p + 1) * self.c_in].iter_mut().zip(&src[s..s + self.c_in]) {
                        *d += *v;
                    }
                }
            }
        }
        dx
    }
}

impl<S: Scalar> Module<S> for Conv1d<S> {
    fn forward(&mut self, x: &Seq<S>, _ctx: &mut Ctx) -> Seq<S> {
        assert_eq!(x.c, self.c_in, "conv expects {} input channels, got {}", self.c_in, x.c);
        let t_out = self.out_len(x.t);
        assert!(t_out > 0, "input of length {} too short for the convolution", x.t);
        self.t_in = x.t;
        let width = self.kernel * self.c_in;
        let cols = if self.is_tiling(x.t) {
            Seq::from_vec(x.b, t_out, width, x.data.clone())
        } else {
            self.im2col(x, t_out)
        };
        let rows = x.b * t_out;
        let mut y = Vec::with_capacity(rows * self.c_out);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        matmul(false, false, rows, width, self.c_out, S::one(), &cols.data, &self.weight.value, S::one(), &mut y);
        self.cols = Some(cols);
        Seq::from_vec(x.b, t_out, self.c_out, y)
    }

    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        let cols = self.cols.as_ref().expect("backward before forward");
        let width = self.kernel * self.c_in;
        let rows = dy.rows();
        matmul(true, false, width, rows, self.c_out, S::one(), &cols.data, &dy.data, S::one(), &mut self.weight.grad);
        for r in 0..rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(&dy.data[r * self.c_out..(r + 1) * self.c_out]) {
                *g += d;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols = vec![S::zero(); rows * width];
        matmul(false, true, rows, self.c_out, width, S::one(), &dy.data, &self.weight.value, S::zero(), &mut dcols);
        if self.is_tiling(self.t_in) {
            Some(Seq::from_vec(dy.b, self.t_in, self.c_in, dcols))
        } else {
            Some(self.col2im(&dcols, dy.b, dy.t))
        }
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn out_len(&self, t_in: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = t_in + 2 * self.padding;
        if padded < span { 0 } else { (padded - span) / self.stride + 1 }
    }

    fn out_channels(&self, _c_in: usize) -> usize {
        self.c_out
    }

    fn clear(&mut self) {
        self.cols = None;
    }
}
