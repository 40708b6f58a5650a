//! Residual networks (torchvision layout) with the classifier removed, and
//! the small test encoder.

use alloc::format;

use super::conv::Init;
use super::layer::join;
use super::{BatchNorm2d, Conv2d, GlobalAvgPool, Layer, MaxPool2d, Param, Relu, Sequential, Tanh, Tensor};
use crate::seed::StreamRng;
use crate::Real;

fn conv<T: Real>(i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut StreamRng) -> Conv2d<T> {
    Conv2d::new(i, o, k, s, p, false, Init::KaimingNormalFanOut, rng)
}

fn downsample<T: Real>(i: usize, o: usize, stride: usize, rng: &mut StreamRng) -> Option<Sequential<T>> {
    (stride != 1 || i != o).then(|| {
        Sequential::new()
            .push("0", conv(i, o, 1, stride, 0, rng))
            .push("1", BatchNorm2d::new(o))
    })
}

/// Residual sum of a main path and an (optionally projected) shortcut,
/// followed by ReLU.
struct Residual<T> {
    main: Sequential<T>,
    shortcut: Option<Sequential<T>>,
    out: Relu<T>,
}

impl<T: Real> Residual<T> {
    fn add(a: &mut Tensor<T>, b: &Tensor<T>) {
        a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += *y);
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.main.forward(x);
        match &self.shortcut {
            Some(s) => Self::add(&mut y, &s.forward(x)),
            None => Self::add(&mut y, x),
        }
        self.out.forward(&y)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.main.forward_train(x);
        match &mut self.shortcut {
            Some(s) => Self::add(&mut y, &s.forward_train(x)),
            None => Self::add(&mut y, x),
        }
        self.out.forward_train(&y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let g = self.out.backward(grad);
        let mut dx = self.main.backward(&g);
        match &mut self.shortcut {
            Some(s) => Self::add(&mut dx, &s.backward(&g)),
            None => Self::add(&mut dx, &g),
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.main.visit(prefix, f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "downsample"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.main.visit_mut(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "downsample"), f);
        }
    }
}

macro_rules! residual_layer {
    ($name:ident) => {
        impl<T: Real> Layer<T> for $name<T> {
            fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
                self.0.forward(x)
            }
            fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
                self.0.forward_train(x)
            }
            fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
                self.0.backward(grad)
            }
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
                self.0.visit(prefix, f)
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
                self.0.visit_mut(prefix, f)
            }
        }
    };
}

/// Two 3×3 convolutions (ResNet-18/34).
pub struct BasicBlock<T>(Residual<T>);

impl<T: Real> BasicBlock<T> {
    pub const EXPANSION: usize = 1;

    pub fn new(inplanes: usize, planes: usize, stride: usize, rng: &mut StreamRng) -> Self {
        let main = Sequential::new()
            .push("conv1", conv(inplanes, planes, 3, stride, 1, rng))
            .push("bn1", BatchNorm2d::new(planes))
            .push("relu", Relu::new())
            .push("conv2", conv(planes, planes, 3, 1, 1, rng))
            .push("bn2", BatchNorm2d::new(planes));
        Self(Residual {
            main,
            shortcut: downsample(inplanes, planes, stride, rng),
            out: Relu::new(),
        })
    }
}

residual_layer!(BasicBlock);

/// 1×1 → 3×3 (strided) → 1×1 with 4× expansion (ResNet-50).
pub struct Bottleneck<T>(Residual<T>);

impl<T: Real> Bottleneck<T> {
    pub const EXPANSION: usize = 4;

    pub fn new(inplanes: usize, planes: usize, stride: usize, rng: &mut StreamRng) -> Self {
        let out = planes * Self::EXPANSION;
        let main = Sequential::new()
            .push("conv1", conv(inplanes, planes, 1, 1, 0, rng))
            .push("bn1", BatchNorm2d::new(planes))
            .push("relu1", Relu::new())
            .push("conv2", conv(planes, planes, 3, stride, 1, rng))
            .push("bn2", BatchNorm2d::new(planes))
            .push("relu2", Relu::new())
            .push("conv3", conv(planes, out, 1, 1, 0, rng))
            .push("bn3", BatchNorm2d::new(out));
        Self(Residual {
            main,
            shortcut: downsample(inplanes, out, stride, rng),
            out: Relu::new(),
        })
    }
}

residual_layer!(Bottleneck);

/// Residual network of the given depth (18, 34 or 50) ending in global
/// average pooling; returns the network and its embedding width.
pub fn resnet<T: Real>(depth: usize, rng: &mut StreamRng) -> Option<(Sequential<T>, usize)> {
    let (blocks, bottleneck) = match depth {
        18 => ([2, 2, 2, 2], false),
        34 => ([3, 4, 6, 3], false),
        50 => ([3, 4, 6, 3], true),
        _ => return None,
    };
    let mut net = Sequential::new()
        .push("conv1", conv(3, 64, 7, 2, 3, rng))
        .push("bn1", BatchNorm2d::new(64))
        .push("relu", Relu::new())
        .push("maxpool", MaxPool2d::new(3, 2, 1));
    let mut inplanes = 64;
    for (stage, &count) in blocks.iter().enumerate() {
        let planes = 64 << stage;
        let mut layer = Sequential::new();
        for b in 0..count {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let name = format!("{b}");
            if bottleneck {
                layer = layer.push(name, Bottleneck::new(inplanes, planes, stride, rng));
                inplanes = planes * Bottleneck::<T>::EXPANSION;
            } else {
                layer = layer.push(name, BasicBlock::new(inplanes, planes, stride, rng));
                inplanes = planes * BasicBlock::<T>::EXPANSION;
            }
        }
        net = net.push(format!("layer{}", stage + 1), layer);
    }
    Some((net.push("avgpool", GlobalAvgPool::new()), inplanes))
}

pub const TINY_EMBEDDING_DIM: usize = 16;

/// Three strided 3×3 conv blocks with tanh, then global average pooling:
/// 3 → 8 → 16 → 16 channels, 3 712 parameters, `D = 16`.
pub fn tiny_test_cnn<T: Real>(rng: &mut StreamRng) -> Sequential<T> {
    let c = |i, o, s, rng: &mut StreamRng| Conv2d::new(i, o, 3, s, 1, true, Init::XavierUniform, rng);
    Sequential::new()
        .push("conv1", c(3, 8, 2, rng))
        .push("act1", Tanh::new())
        .push("conv2", c(8, 16, 2, rng))
        .push("act2", Tanh::new())
        .push("conv3", c(16, TINY_EMBEDDING_DIM, 1, rng))
        .push("act3", Tanh::new())
        .push("avgpool", GlobalAvgPool::new())
}
