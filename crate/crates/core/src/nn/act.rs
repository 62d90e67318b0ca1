use super::{Ctx, Module, Param, Scalar, Seq};

/// Elementwise `max(x, 0)`.
#[derive(Debug, Clone, Default)]
pub struct Relu<S> {
    out: Option<Seq<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Self { out: None }
    }
}

impl<S: Scalar> Module<S> for Relu<S> {
    fn forward(&mut self, x: &Seq<S>, _ctx: &mut Ctx) -> Seq<S> {
        let y = x.map(|v| v.max(S::zero()));
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Seq<S>, need_input_grad: bool) -> Option<Seq<S>> {
        if !need_input_grad {
            return None;
        }
        let y = self.out.as_ref().expect("backward before forward");
        let mut dx = dy.clone();
        for (d, &o) in dx.data.iter_mut().zip(&y.data) {
            if o <= S::zero() {
                *d = S::zero();
            }
        }
        Some(dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        Vec::new()
    }

    fn out_len(&self, t_in: usize) -> usize {
        t_in
    }

    fn out_channels(&self, c_in: usize) -> usize {
        c_in
    }

    fn clear(&mut self) {
        self.out = None;
    }
}
