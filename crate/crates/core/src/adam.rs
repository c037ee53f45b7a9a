//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .unzip();
        AdamState {
            config,
            step_count: 0,
            m,
            v,
        }
    }

    /// One update of every parameter. `grads[i]` must have the length of
    /// `params[i]`. The step counter is incremented before bias correction.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        assert!(lr > 0.0, "learning rate must be positive");
        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), g.len(), "gradient length");
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(x)]
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the first update is lr·g/(|g|+ε).
        let mut p = one(1.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &[vec![2.0]], 0.1);
        assert!((1.0 - p[0].item() - 0.1).abs() < 1e-6);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = one(1.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &[vec![0.0]], 0.1);
        assert_eq!(p[0].item(), 1.0);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = one(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let mut prev = 0.0;
        for _ in 0..2 {
            s.step(&mut p, &[vec![-3.0]], 0.01);
            assert!(p[0].item() > prev);
            prev = p[0].item();
        }
        assert!(s.v[0][0] >= 0.0);
    }
}
