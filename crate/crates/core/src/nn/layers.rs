use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::layer::join;
use super::{Layer, Param, Tensor};
use crate::seed::StreamRng;
use crate::Real;

#[derive(Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("relu backward without forward_train");
        let mut dx = grad.clone();
        for (d, &o) in dx.data.iter_mut().zip(&y.data) {
            if o <= T::zero() {
                *d = T::zero();
            }
        }
        dx
    }
}

#[derive(Default)]
pub struct Tanh<T> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Tanh<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<T: Real> Layer<T> for Tanh<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.tanh());
        y
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let y = self.output.take().expect("tanh backward without forward_train");
        let mut dx = grad.clone();
        for (d, &o) in dx.data.iter_mut().zip(&y.data) {
            *d *= T::one() - o * o;
        }
        dx
    }
}

/// Max pooling with implicit `-inf` padding.
pub struct MaxPool2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<([usize; 4], Vec<usize>)>,
    _marker: core::marker::PhantomData<T>,
}

impl<T: Real> MaxPool2d<T> {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
            _marker: core::marker::PhantomData,
        }
    }

    fn pool(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
        let [n, c, h, w] = x.shape;
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let mut arg = vec![0usize; y.data.len()];
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = base;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if x.data[i] > best {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    y.data[o] = best;
                    arg[o] = best_i;
                    o += 1;
                }
            }
        }
        (y, arg)
    }
}

impl<T: Real> Layer<T> for MaxPool2d<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.pool(x).0
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (y, arg) = self.pool(x);
        self.cache = Some((x.shape, arg));
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (shape, arg) = self.cache.take().expect("maxpool backward without forward_train");
        let mut dx = Tensor::zeros(shape);
        for (g, &i) in grad.data.iter().zip(&arg) {
            dx.data[i] += *g;
        }
        dx
    }
}

/// Spatial mean per channel, flattened to `N×C×1×1`.
pub struct GlobalAvgPool<T> {
    input_shape: Option<[usize; 4]>,
    _marker: core::marker::PhantomData<T>,
}

impl<T: Real> Default for GlobalAvgPool<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GlobalAvgPool<T> {
    pub fn new() -> Self {
        Self {
            input_shape: None,
            _marker: core::marker::PhantomData,
        }
    }
}

impl<T: Real> Layer<T> for GlobalAvgPool<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let plane = h * w;
        let inv = T::one() / T::from_usize(plane);
        let data = x.data.chunks_exact(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Tensor::from_vec([n, c, 1, 1], data)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input_shape = Some(x.shape);
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.input_shape.take().expect("avgpool backward without forward_train");
        let plane = shape[2] * shape[3];
        let inv = T::one() / T::from_usize(plane);
        let mut dx = Tensor::zeros(shape);
        for (chunk, &g) in dx.data.chunks_exact_mut(plane).zip(&grad.data) {
            chunk.iter_mut().for_each(|v| *v = g * inv);
        }
        dx
    }
}

/// Fully connected layer on `N×D×1×1` input; weights `[out, in]`.
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    weight: Param<T>,
    bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    /// Seeded uniform weights in `±1/√in`, zero bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut StreamRng) -> Self {
        let bound = 1.0 / Float::sqrt(in_features as f64);
        let w = (0..in_features * out_features)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            in_features,
            out_features,
            weight: Param::trainable(&[out_features, in_features], w),
            bias: Param::trainable(&[out_features], vec![T::zero(); out_features]),
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear input width");
        let mut y = Tensor::zeros([n, self.out_features, 1, 1]);
        for b in 0..n {
            y.item_mut(b).copy_from_slice(&self.bias.value);
        }
        // y = x · Wᵀ + b
        T::gemm(
            n,
            self.in_features,
            self.out_features,
            T::one(),
            &x.data,
            self.in_features as isize,
            1,
            &self.weight.value,
            1,
            self.in_features as isize,
            T::one(),
            &mut y.data,
            self.out_features as isize,
            1,
        );
        y
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("linear backward without forward_train");
        let n = x.batch();
        // dW += gᵀ · x
        T::gemm(
            self.out_features,
            n,
            self.in_features,
            T::one(),
            &grad.data,
            1,
            self.out_features as isize,
            &x.data,
            self.in_features as isize,
            1,
            T::one(),
            &mut self.weight.grad,
            self.in_features as isize,
            1,
        );
        for b in 0..n {
            for (gb, &g) in self.bias.grad.iter_mut().zip(grad.item(b)) {
                *gb += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape);
        T::gemm(
            n,
            self.out_features,
            self.in_features,
            T::one(),
            &grad.data,
            self.out_features as isize,
            1,
            &self.weight.value,
            self.in_features as isize,
            1,
            T::zero(),
            &mut dx.data,
            self.in_features as isize,
            1,
        );
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
