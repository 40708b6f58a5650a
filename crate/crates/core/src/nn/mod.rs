//! A small convolutional network library with explicit backpropagation.
//!
//! Tensors are dense `N×C×H×W` buffers. Every [`Layer`] has an eval-mode
//! forward that takes `&self` (so a network can be shared read-only across
//! threads), and a train-mode forward that caches what [`Layer::backward`]
//! needs. Parameter names follow torchvision's `state_dict` keys so ImageNet
//! weights exported from torchvision load by name.

mod adam;
mod conv;
mod encoder;
mod layer;
mod layers;
mod norm;
mod resnet;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, Init};
pub use encoder::{Encoder, EncoderKind};
pub use layer::{Layer, Param, ParamKind, Sequential};
pub use layers::{GlobalAvgPool, Linear, MaxPool2d, Relu, Tanh};
pub use norm::BatchNorm2d;
pub use resnet::{resnet, tiny_test_cnn, BasicBlock, Bottleneck};
pub use tensor::Tensor;
