use rand_chacha::ChaCha8Rng;

use super::{Ctx, Module, Param, Scalar, Seq, matmul};

/// Per-time-step affine map `y = x·W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<Seq<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (c_in as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![c_in, c_out], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![c_out], bound, rng),
            input: None,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[0]
    }

    /// `x·W + b` on a plain row-major `[rows, in]` buffer.
    pub fn apply_rows(&self, x: &[S], rows: usize) -> Vec<S> {
        let (ci, co) = (self.c_in(), self.out_channels_());
        let mut y = Vec::with_capacity(rows * co);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        matmul(false, false, rows, ci, co, S::one(), x, &self.weight.value, S::one(), &mut y);
        y
    }

    /// Gradient step for `apply_rows`: accumulates into the parameters and
    /// returns `dx` when asked.
    pub fn backward_rows(&mut self, x: &[S], dy: &[S], rows: usize, need_input_grad: bool) -> Option<Vec<S>> {
        let (ci, co) = (self.c_in(), self.out_channels_());
        matmul(true, false, ci, rows, co, S::one(), x, dy, S::one(), &mut self.weight.grad);
        for r in 0..rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(&dy[r * co..(r + 1) * co]) {
                *g += d;
            }
        }
        need_input_grad.then(|| {
            let mut dx = vec![S::zero(); rows * ci];
            matmul(false, true, rows, co, ci, S::one(), dy, &self.weight.value, S::zero(), &mut dx);
            dx
        })
    }

    fn out_channels_(&self) -> usize {
        self.weight.shape[1]
    }
}

impl<S: Scalar> Module<S> for Linear<S> {
    fn forward(&mut self, x: &Seq<S>, _ctx: &mut Ctx) -> Seq<S> {
        assert_eq!(x.c, self.c_in(), "linear expects {} input channels", self.c_in());
        let y = self.apply_rows(&x.data, x.rows());
        self.input = Some(x.clone());
        Seq::from_vec(x.b, x.t, self.out_channels_(), y)
    }

    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        let x = self.input.take().expect("backward before forward");
        let dx = self.backward_rows(&x.data, &dy.data, x.rows(), need_input_grad);
        self.input = Some(x);
        dx.map(|d| Seq::from_vec(dy.b, dy.t, self.c_in(), d))
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn out_len(&self, t_in: usize) -> usize {
        t_in
    }

    fn out_channels(&self, _c_in: usize) -> usize {
        self.out_channels_()
    }

    fn clear(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_gradients, random_seq, rng};

    #[test]
    fn gradients() {
        let mut l = Linear::<f64>::new("fc", 4, 3, &mut rng(1));
        check_gradients(&mut l, &random_seq(2, 3, 4, 2), 1e-6);
    }

    #[test]
    fn known_values() {
        let mut l = Linear::<f64>::new("fc", 2, 1, &mut rng(1));
        l.weight.value = vec![2.0, -1.0];
        l.bias.value = vec![0.5];
        let y = l.forward(&Seq::from_vec(1, 2, 2, vec![1.0, 1.0, 3.0, 4.0]), &mut Ctx::eval());
        assert_eq!(y.data, vec![1.5, 2.5]);
    }
}
