use serde::{Deserialize, Serialize};

use super::{Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers live in each [`Param`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0 }
    }

    pub fn update<'a, S: Scalar>(&mut self, params: impl IntoIterator<Item = &'a mut Param<S>>) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (ob1, ob2) = (S::lit(1.0 - c.beta1), S::lit(1.0 - c.beta2));
        let step = S::lit(c.lr / bc1);
        let sqrt_bc2 = S::lit(bc2.sqrt());
        let eps = S::lit(c.eps);
        for p in params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + ob1 * g;
                p.v[i] = b2 * p.v[i] + ob2 * g * g;
                p.value[i] -= step * p.m[i] / (p.v[i].sqrt() / sqrt_bc2 + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // after one step the bias-corrected update is lr·sign(g)
        let mut p = Param::<f64>::new("w", vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.3, -4.0];
        let mut opt = Adam::new(AdamConfig::default());
        opt.update([&mut p]);
        assert!((p.value[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.value[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::<f64>::new("w", vec![1], vec![5.0]);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        for _ in 0..500 {
            p.grad = vec![2.0 * (p.value[0] - 2.0)];
            opt.update([&mut p]);
        }
        assert!((p.value[0] - 2.0).abs() < 1e-2);
    }
}
