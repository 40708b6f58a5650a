use alloc::vec;
use alloc::vec::Vec;

use super::layer::join;
use super::{Layer, Param, Tensor};
use crate::Real;

/// Per-channel batch normalization with running statistics.
///
/// Train mode normalizes with biased batch variance and updates the running
/// estimates (unbiased variance, momentum 0.1); eval mode uses the running
/// estimates only.
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    weight: Param<T>,
    bias: Param<T>,
    running_mean: Param<T>,
    running_var: Param<T>,
    cache: Option<BnCache<T>>,
}

struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            weight: Param::trainable(&[channels], vec![T::one(); channels]),
            bias: Param::trainable(&[channels], vec![T::zero(); channels]),
            running_mean: Param::buffer(&[channels], vec![T::zero(); channels]),
            running_var: Param::buffer(&[channels], vec![T::one(); channels]),
            cache: None,
        }
    }

    fn channel_slices(x: &Tensor<T>, c: usize) -> impl Iterator<Item = &[T]> {
        let plane = x.shape[2] * x.shape[3];
        let per_item = x.item_len();
        (0..x.shape[0]).map(move |n| &x.data[n * per_item + c * plane..][..plane])
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let plane = x.shape[2] * x.shape[3];
        let eps = T::from_f64(self.eps);
        let mut y = x.clone();
        for n in 0..x.shape[0] {
            let item = y.item_mut(n);
            for c in 0..self.channels {
                let scale = self.weight.value[c] / (self.running_var.value[c] + eps).sqrt();
                let shift = self.bias.value[c] - self.running_mean.value[c] * scale;
                item[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let plane = x.shape[2] * x.shape[3];
        let count = x.shape[0] * plane;
        let m = T::from_usize(count);
        let eps = T::from_f64(self.eps);
        let momentum = T::from_f64(self.momentum);
        let mut xhat = x.clone();
        let mut inv_std = vec![T::zero(); self.channels];
        for c in 0..self.channels {
            let mean = Self::channel_slices(x, c).flatten().copied().sum::<T>() / m;
            let var = Self::channel_slices(x, c)
                .flatten()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                / m;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[c] = inv;
            for n in 0..x.shape[0] {
                xhat.item_mut(n)[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = (*v - mean) * inv);
            }
            let unbiased = if count > 1 {
                var * m / (m - T::one())
            } else {
                var
            };
            let rm = &mut self.running_mean.value[c];
            *rm = (T::one() - momentum) * *rm + momentum * mean;
            let rv = &mut self.running_var.value[c];
            *rv = (T::one() - momentum) * *rv + momentum * unbiased;
        }
        let mut y = xhat.clone();
        for n in 0..x.shape[0] {
            let item = y.item_mut(n);
            for c in 0..self.channels {
                let (g, b) = (self.weight.value[c], self.bias.value[c]);
                item[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * g + b);
            }
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let BnCache { xhat, inv_std } = self.cache.take().expect("batchnorm backward without forward_train");
        let plane = grad.shape[2] * grad.shape[3];
        let m = T::from_usize(grad.shape[0] * plane);
        let mut dx = Tensor::zeros(grad.shape);
        for c in 0..self.channels {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for (g, xh) in Self::channel_slices(grad, c).zip(Self::channel_slices(&xhat, c)) {
                for (&gv, &xv) in g.iter().zip(xh) {
                    sum_dy += gv;
                    sum_dy_xhat += gv * xv;
                }
            }
            self.bias.grad[c] += sum_dy;
            self.weight.grad[c] += sum_dy_xhat;
            let k = self.weight.value[c] * inv_std[c] / m;
            for n in 0..grad.shape[0] {
                let off = n * grad.item_len() + c * plane;
                for i in off..off + plane {
                    dx.data[i] = k * (m * grad.data[i] - sum_dy - xhat.data[i] * sum_dy_xhat);
                }
            }
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn input(seed: u64) -> Tensor<f64> {
        let mut rng = rng_from(&[seed]);
        Tensor::from_vec([3, 2, 2, 2], (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn train_output_is_normalized() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let y = bn.forward_train(&input(1));
        for c in 0..2 {
            let vals: Vec<f64> = BatchNorm2d::channel_slices(&y, c).flatten().copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn eval_uses_running_stats() {
        let bn = BatchNorm2d::<f64>::new(2);
        let x = input(2);
        let y = bn.forward(&x);
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b * s).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.weight.value = vec![1.3, 0.7];
        bn.bias.value = vec![0.1, -0.4];
        let x = input(3);
        let r = input(4);
        let loss = |bn: &mut BatchNorm2d<f64>, x: &Tensor<f64>| -> f64 {
            let y = bn.forward_train(x);
            bn.cache = None;
            y.data.iter().zip(&r.data).map(|(a, b)| a * b * a).sum()
        };
        let y = bn.forward_train(&x);
        let g = Tensor::from_vec(y.shape, y.data.iter().zip(&r.data).map(|(a, b)| 2.0 * a * b).collect());
        let dx = bn.backward(&g);
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6, "dx[{i}]: {fd} vs {}", dx.data[i]);
        }
    }
}
