//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(
            grads.len(),
            params.len(),
            "one gradient per parameter tensor"
        );
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![3], vec![1.0, 1.0, 1.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.update(&mut store, &[Tensor::new(vec![3], vec![0.5, -2.0, 0.0])]);
        let w = store.tensors()[0].data();
        assert!((w[0] - (1.0 - 2e-4)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 2e-4)).abs() < 1e-9);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2], vec![0.3, -0.7]));
        let before = store.clone();
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
            &store,
        );
        adam.update(&mut store, &[Tensor::new(vec![2], vec![1.0, 1.0])]);
        assert_eq!(store, before);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![1], vec![3.0]));
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            let w = store.tensors()[0].item();
            adam.update(&mut store, &[Tensor::scalar(2.0 * (w - 1.0))]);
        }
        assert!((store.tensors()[0].item() - 1.0).abs() < 1e-2);
    }
}
