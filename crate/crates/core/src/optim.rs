//! AdamW with decoupled weight decay and per-tensor learning rates.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Updates applied per tensor; tensors without a gradient do not advance.
    steps: Vec<u64>,
    decay: Vec<bool>,
}

impl AdamW {
    /// `decay[i]` says whether tensor `i` receives weight decay.
    pub fn new(config: AdamWConfig, params: &[Tensor], decay: Vec<bool>) -> Self {
        assert_eq!(decay.len(), params.len());
        Self {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            steps: vec![0; params.len()],
            decay,
        }
    }

    /// One update. Tensors whose gradient is `None` are left untouched,
    /// moments included.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lrs: &[f64]) {
        let AdamWConfig { betas: (b1, b2), eps, weight_decay } = self.config;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let lr = lrs[i];
            let wd = if self.decay[i] { weight_decay } else { 0.0 };
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps) + wd * *p;
                *p -= lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AdamWConfig {
        AdamWConfig { betas: (0.9, 0.999), eps: 1e-8, weight_decay: 0.1 }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::from_vec(1, 2, vec![1.0, -1.0])];
        let mut opt = AdamW::new(cfg(), &p, vec![false]);
        opt.step(&mut p, &[Some(Tensor::from_vec(1, 2, vec![0.5, -2.0]))], &[0.01]);
        // bias-corrected first step is lr * sign(g) up to eps
        assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data()[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_and_zero_rate() {
        let mut p = vec![Tensor::from_vec(1, 1, vec![2.0]), Tensor::from_vec(1, 1, vec![3.0])];
        let mut opt = AdamW::new(cfg(), &p, vec![true, true]);
        let g = [Some(Tensor::scalar(0.0)), Some(Tensor::scalar(1.0))];
        opt.step(&mut p, &g, &[0.5, 0.0]);
        assert!((p[0].item() - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12);
        assert_eq!(p[1].item(), 3.0);
    }

    #[test]
    fn missing_gradient_is_a_no_op() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(cfg(), &p, vec![true]);
        opt.step(&mut p, &[None], &[1.0]);
        assert_eq!(p[0].item(), 1.0);
    }
}
