use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::invalid(format!("bad optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: OptimizerConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match the parameter list"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical("adam", format!("non-finite gradient for parameter {i}")));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                p[j] -= c.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::vector(vec![0.5, -3.0])];
        let mut opt = Adam::new(OptimizerConfig::default(), &p);
        opt.update(&mut p, &g).unwrap();
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((p[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[0].data()[1] - (-2.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::vector(vec![3.0])];
        let mut opt = Adam::new(OptimizerConfig { lr: 0.05, ..Default::default() }, &p);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * (x - 1.0))];
            opt.update(&mut p, &g).unwrap();
        }
        assert!((p[0].item() - 1.0).abs() < 1e-3);
    }
}
