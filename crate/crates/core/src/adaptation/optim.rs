//! Adam with bias correction and a cosine-annealed learning rate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ClusterHead;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state over a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: AdamParams, block_sizes: &[usize]) -> Self {
        Self {
            params,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_head(params: AdamParams, head: &ClusterHead) -> Self {
        let sizes: Vec<usize> = head.parameter_blocks().iter().map(|b| b.len()).collect();
        Self::new(params, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every block: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, blocks: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (b, (params, grad)) in blocks.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[b];
            let v = &mut self.v[b];
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn step_head(&mut self, head: &mut ClusterHead, grad: &ClusterHead, lr: f64) {
        let grads = grad.parameter_blocks();
        let mut blocks = head.parameter_blocks_mut();
        self.step(&mut blocks, &grads, lr);
    }
}

/// Cosine annealing from `start` to `end` over `total_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.start;
        }
        let frac = (step.min(self.total_steps) as f64) / self.total_steps as f64;
        self.end + 0.5 * (self.start - self.end) * (1.0 + (PI * frac).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_on_half_square() {
        // f(w) = w^2 / 2, grad = w = 1. After bias correction m_hat = v_hat = 1,
        // so the step is exactly lr / (1 + eps).
        let lr = 0.01;
        let mut w = [1.0];
        let mut adam = Adam::new(AdamParams::default(), &[1]);
        let g = [w[0]];
        adam.step(&mut [&mut w[..]], &[&g[..]], lr);
        assert_eq!(w[0], 1.0 - lr * 1.0 / (1.0 + 1e-8));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = vec![3.0, -2.0];
        let mut adam = Adam::new(AdamParams::default(), &[2]);
        for _ in 0..2000 {
            let g = w.clone();
            adam.step(&mut [&mut w[..]], &[&g[..]], 0.05);
        }
        assert!(w.iter().all(|v| v.abs() < 1e-2), "{w:?}");
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut w = vec![0.5, 1.5];
        let mut adam = Adam::new(AdamParams::default(), &[2]);
        adam.step(&mut [&mut w[..]], &[&[1.0, -1.0][..]], 0.0);
        assert_eq!(w, vec![0.5, 1.5]);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = CosineSchedule {
            start: 1e-3,
            end: 1e-4,
            total_steps: 10,
        };
        assert_eq!(s.lr(0), 1e-3);
        assert!((s.lr(10) - 1e-4).abs() < 1e-18);
        assert!((s.lr(5) - 5.5e-4).abs() < 1e-15);
        for t in 0..10 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
    }
}
