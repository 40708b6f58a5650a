use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moments are matched to trainable
/// parameters by visit order, which is fixed for a given network.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update over every trainable parameter yielded by `visit`.
    pub fn step(&mut self, visit: impl FnOnce(&mut dyn FnMut(&str, &mut Param<T>))) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let lr = T::from_f64(c.learning_rate);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let eps = T::from_f64(c.eps);
        let bc1 = T::from_f64(1.0 - num_traits::Float::powi(c.beta1, t));
        let bc2 = T::from_f64(1.0 - num_traits::Float::powi(c.beta2, t));
        let first = &mut self.first;
        let second = &mut self.second;
        let mut slot = 0usize;
        visit(&mut |_, p: &mut Param<T>| {
            if !p.is_trainable() {
                return;
            }
            if first.len() == slot {
                first.push(vec![T::zero(); p.value.len()]);
                second.push(vec![T::zero(); p.value.len()]);
            }
            let (m, v) = (&mut first[slot], &mut second[slot]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            slot += 1;
        });
    }
}
