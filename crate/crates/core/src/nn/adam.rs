use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::Params;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Moment settings conventional for style-based GANs: β = (0, 0.99).
    pub fn gan(lr: f64) -> Self {
        Self { lr, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// Adaptive moment estimation over a [`Params`] model.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<M: Params<T>>(config: AdamConfig, model: &M) -> Self {
        let mut m = Vec::new();
        model.visit("", &mut |_, a| m.push(ArrayD::from_elem(a.raw_dim(), T::zero())));
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// Applies one update `params -= lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn update<M: Params<T>>(&mut self, params: &mut M, grads: &M) {
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::c(c.lr), T::c(c.eps));
        let one = T::one();
        let mut gs = Vec::new();
        grads.visit("", &mut |_, a| gs.push(a));
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut("", &mut |_, p| {
            let g = gs[i];
            ndarray::Zip::from(p)
                .and(g)
                .and(&mut m[i])
                .and(&mut v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut layer: Dense<f64> = Dense::zeros(2, 1);
        let mut grad = layer.zeros_like();
        grad.weight.fill(3.0);
        grad.bias.fill(-0.5);
        let mut opt = Adam::new(AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-12 }, &layer);
        opt.update(&mut layer, &grad);
        assert!(layer.weight.iter().all(|&w| (w + 0.01).abs() < 1e-9));
        assert!(layer.bias.iter().all(|&b| (b - 0.01).abs() < 1e-9));
    }
}
