use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::resnet::{resnet, tiny_test_cnn, TINY_EMBEDDING_DIM};
use super::{Layer, Param, Sequential, Tensor};
use crate::seed::{self, fnv1a};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Resnet18,
    Resnet34,
    Resnet50,
    TinyTestCnn,
}

impl EncoderKind {
    pub fn embedding_dim(self) -> usize {
        match self {
            EncoderKind::Resnet18 | EncoderKind::Resnet34 => 512,
            EncoderKind::Resnet50 => 2048,
            EncoderKind::TinyTestCnn => TINY_EMBEDDING_DIM,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Resnet18 => "resnet18",
            EncoderKind::Resnet34 => "resnet34",
            EncoderKind::Resnet50 => "resnet50",
            EncoderKind::TinyTestCnn => "tiny_test_cnn",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "resnet18" => Ok(EncoderKind::Resnet18),
            "resnet34" => Ok(EncoderKind::Resnet34),
            "resnet50" => Ok(EncoderKind::Resnet50),
            "tiny_test_cnn" | "tiny" => Ok(EncoderKind::TinyTestCnn),
            _ => Err(Error::InvalidArgument(format!("unknown backbone `{s}`"))),
        }
    }
}

/// Backbone mapping `N×3×S×S` patches to `N×D` embeddings (no classifier).
pub struct Encoder<T> {
    pub kind: EncoderKind,
    pub dim: usize,
    pub pretrained: bool,
    net: Sequential<T>,
}

impl<T: Real> Encoder<T> {
    /// Randomly initialized encoder.
    pub fn new(kind: EncoderKind, seed: u64) -> Self {
        let mut rng = seed::rng_from(&[seed, 0xe4c0]);
        let (net, dim) = match kind {
            EncoderKind::TinyTestCnn => (tiny_test_cnn(&mut rng), TINY_EMBEDDING_DIM),
            EncoderKind::Resnet18 => resnet(18, &mut rng).expect("depth 18"),
            EncoderKind::Resnet34 => resnet(34, &mut rng).expect("depth 34"),
            EncoderKind::Resnet50 => resnet(50, &mut rng).expect("depth 50"),
        };
        debug_assert_eq!(dim, kind.embedding_dim());
        Self {
            kind,
            dim,
            pretrained: false,
            net,
        }
    }

    fn flatten(&self, y: Tensor<T>) -> Tensor<T> {
        let n = y.batch();
        debug_assert_eq!(y.item_len(), self.dim);
        Tensor::from_vec([n, self.dim, 1, 1], y.data)
    }

    /// Eval-mode embedding of a batch.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.flatten(self.net.forward(x))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.net.forward_train(x);
        self.flatten(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        self.net.backward(grad)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.net.visit("", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.net.visit_mut("", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, p| p.zero_grad());
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| {
            if p.is_trainable() {
                n += p.value.len();
            }
        });
        n
    }

    /// Hash over every parameter and buffer, names included.
    pub fn state_hash(&self) -> u64 {
        let mut h = 0u64;
        self.visit(&mut |name, p| {
            h = seed::mix64(h ^ fnv1a(name.as_bytes()));
            for v in &p.value {
                h = seed::mix64(h ^ v.as_f64().to_bits());
            }
        });
        h
    }

    /// Named copies of every parameter and buffer, in visit order.
    pub fn state(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, p| out.push((String::from(name), p.shape.clone(), p.value.clone())));
        out
    }

    /// Overwrites parameters by name. Every parameter of the encoder must be
    /// present; entries the encoder lacks (such as a classifier head) are
    /// returned rather than treated as errors.
    pub fn load_state(&mut self, mut state: BTreeMap<String, Vec<T>>) -> Result<Vec<String>> {
        let mut failure = None;
        self.visit_mut(&mut |name, p| {
            if failure.is_some() {
                return;
            }
            match state.remove(name) {
                None => failure = Some(Error::UnknownParameter(String::from(name))),
                Some(v) if v.len() != p.value.len() => {
                    failure = Some(Error::ParameterShape {
                        name: String::from(name),
                        expected: p.value.len(),
                        got: v.len(),
                    })
                }
                Some(v) => p.value = v,
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(state.into_keys().collect()),
        }
    }
}
