use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layer::join;
use super::{Layer, Param, Tensor};
use crate::seed::StreamRng;
use crate::Real;

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He normal with fan-out scaling (torchvision's ResNet default).
    KaimingNormalFanOut,
    /// Glorot uniform over the receptive-field fans.
    XavierUniform,
}

/// 2-D convolution, square kernel, weights `[out, in, k, k]`.
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    weight: Param<T>,
    bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut StreamRng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let n = out_channels * fan_in;
        let values: Vec<T> = match init {
            Init::KaimingNormalFanOut => {
                let dist = Normal::new(0.0, Float::sqrt(2.0 / fan_out as f64)).expect("finite std");
                (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
            }
            Init::XavierUniform => {
                let bound = Float::sqrt(6.0 / (fan_in + fan_out) as f64);
                (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
            }
        };
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::trainable(&[out_channels, in_channels, kernel, kernel], values),
            bias: bias.then(|| Param::trainable(&[out_channels], vec![T::zero(); out_channels])),
            input: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let xc = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(h, w);
        let plane = oh * ow;
        let kk = self.in_channels * self.kernel * self.kernel;
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * plane] };
        for b in 0..n {
            let xi = x.item(b);
            let cols: &[T] = if self.is_pointwise() {
                xi
            } else {
                self.im2col(xi, h, w, oh, ow, &mut col);
                &col
            };
            let yo = out.item_mut(b);
            if let Some(bias) = &self.bias {
                for (o, &bv) in bias.value.iter().enumerate() {
                    yo[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = bv);
                }
            }
            let beta = if self.bias.is_some() { T::one() } else { T::zero() };
            T::gemm(
                self.out_channels,
                kk,
                plane,
                T::one(),
                &self.weight.value,
                kk as isize,
                1,
                cols,
                plane as isize,
                1,
                beta,
                yo,
                plane as isize,
                1,
            );
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without forward_train");
        let [n, _, h, w] = x.shape;
        let (oh, ow) = self.output_size(h, w);
        let plane = oh * ow;
        let kk = self.in_channels * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(x.shape);
        let mut col = vec![T::zero(); kk * plane];
        let mut dcol = vec![T::zero(); kk * plane];
        for b in 0..n {
            let g = grad.item(b);
            let cols: &[T] = if self.is_pointwise() {
                x.item(b)
            } else {
                self.im2col(x.item(b), h, w, oh, ow, &mut col);
                &col
            };
            // dW += g · colᵀ
            T::gemm(
                self.out_channels,
                plane,
                kk,
                T::one(),
                g,
                plane as isize,
                1,
                cols,
                1,
                plane as isize,
                T::one(),
                &mut self.weight.grad,
                kk as isize,
                1,
            );
            if let Some(bias) = &mut self.bias {
                for (o, gb) in bias.grad.iter_mut().enumerate() {
                    *gb += g[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
                }
            }
            // dcol = Wᵀ · g
            let target: &mut [T] = if self.is_pointwise() { dx.item_mut(b) } else { &mut dcol };
            T::gemm(
                kk,
                self.out_channels,
                plane,
                T::one(),
                &self.weight.value,
                1,
                kk as isize,
                g,
                plane as isize,
                1,
                T::zero(),
                target,
                plane as isize,
                1,
            );
            if !self.is_pointwise() {
                self.col2im(&dcol, h, w, oh, ow, dx.item_mut(b));
            }
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
