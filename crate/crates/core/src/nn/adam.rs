use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `params[i]` and `grads[i]` must have equal shapes
    /// and keep the same order across calls.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam", params.len(), grads.len()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::shape("adam state", self.first.len(), params.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !p.same_shape(g) || self.first[i].len() != p.len() {
                return Err(Error::shape("adam parameter", p.len(), g.len()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Matrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let before = p.clone();
        let g = Matrix::zeros(2, 2);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let lr = 1e-3;
        let mut adam = Adam::new(AdamConfig::with_lr(lr));
        let mut p = Matrix::filled(1, 1, 0.5);
        let g = Matrix::filled(1, 1, 1.0);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        let expected = 0.5 - lr / (1.0 + 1e-8);
        assert!((p[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Matrix::zeros(1, 2);
        adam.step(&mut [&mut p], &[&Matrix::zeros(1, 2)]).unwrap();
        let mut q = Matrix::zeros(1, 3);
        assert!(adam.step(&mut [&mut q], &[&Matrix::zeros(1, 3)]).is_err());
    }
}
