use serde::{Deserialize, Serialize};

use super::l2_norm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                self.m.len(),
                format!("params {} / grads {}", params.len(), grads.len()),
            ));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}

/// Scale `g` in place so that `‖g‖₂ ≤ max_norm`; returns the original norm.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(g);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(4, AdamConfig::with_lr(0.1));
        let mut p = vec![0.0; 4];
        opt.step(&mut p, &[1.0; 4]).unwrap();
        // m̂ = 1, v̂ = 1, so Δ = −0.1 / (1 + 1e-8)
        for v in p {
            assert!((v + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn reset_zeroes_state() {
        let mut opt = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0; 2];
        opt.step(&mut p, &[0.3, -0.2]).unwrap();
        opt.reset();
        assert!(opt.m.iter().chain(&opt.v).all(|v| *v == 0.0));
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn shape_mismatch() {
        let mut opt = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0; 3];
        assert!(matches!(opt.step(&mut p, &[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((l2_norm(&g) - 0.5).abs() < 1e-12);
        let mut small = vec![0.1, 0.0];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.0]);
    }
}
