//! Few-shot image classification with prototypical networks.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece of
//! the pipeline: patch extraction and leakage-free splits ([`dataset`]),
//! synthetic corpora ([`synth`]), budgeted N-way K-shot episode sampling
//! ([`episode`]), a small convolutional network library with hand-written
//! backpropagation and ResNet encoders ([`nn`]), the prototype classifier and
//! its episodic trainer ([`proto`]), the conventional fine-tuned baseline
//! ([`baseline`]), classification metrics ([`metrics`]) and the experiment
//! grid / table logic ([`experiment`]).
//!
//! File formats, image decoding and the command-line front end live in the
//! `protonet` companion crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod baseline;
pub mod dataset;
pub mod episode;
mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod proto;
mod real;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use real::Real;
