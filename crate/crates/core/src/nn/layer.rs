use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer; carries a gradient buffer.
    Trainable,
    /// Running statistics; saved and loaded but never optimized.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    /// Same length as `value` for trainable parameters, empty for buffers.
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn trainable(shape: &[usize], value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            kind: ParamKind::Trainable,
            shape: shape.to_vec(),
            grad: vec![T::zero(); value.len()],
            value,
        }
    }

    pub fn buffer(shape: &[usize], value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            kind: ParamKind::Buffer,
            shape: shape.to_vec(),
            grad: Vec::new(),
            value,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

pub trait Layer<T: Real>: Send + Sync {
    /// Eval-mode forward: no caching, running statistics for normalization.
    fn forward(&self, x: &Tensor<T>) -> Tensor<T>;

    /// Train-mode forward; caches activations for [`Layer::backward`].
    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T>;

    /// Propagates `grad` (w.r.t. the last train-mode output) to the input,
    /// adding parameter gradients into each [`Param::grad`].
    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T>;

    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Named chain of layers.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn push_boxed(&mut self, name: impl Into<String>, layer: Box<dyn Layer<T>>) {
        self.layers.push((name.into(), layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for (_, l) in &self.layers {
            cur = l.forward(&cur);
        }
        cur
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for (_, l) in &mut self.layers {
            cur = l.forward_train(&cur);
        }
        cur
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut cur = grad.clone();
        for (_, l) in self.layers.iter_mut().rev() {
            cur = l.backward(&cur);
        }
        cur
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (name, l) in &self.layers {
            l.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (name, l) in &mut self.layers {
            l.visit_mut(&join(prefix, name), f);
        }
    }
}
