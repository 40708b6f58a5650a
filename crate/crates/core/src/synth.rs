//! Synthetic image corpora for desk-scale runs.
//!
//! Each class is textured noise around a class signature (base colour,
//! stripe frequency). `separability` scales how far signatures sit from a
//! shared centre; at zero every class draws from the same distribution.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ClassKey, ImageView, SourceImage};
use crate::seed;
use crate::{Error, Result};

const CENTER: f64 = 128.0;
const COLOR_SPREAD: f64 = 40.0;
const BASE_FREQUENCY: f64 = 3.0;
const STRIPE_AMPLITUDE: f64 = 25.0;
const NOISE_STD: f64 = 18.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub separability: f64,
    pub view: ImageView,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_classes: usize, images_per_class: usize, image_size: usize, separability: f64, seed: u64) -> Self {
        Self {
            n_classes,
            images_per_class,
            image_size,
            separability,
            view: ImageView::Sur,
            seed,
        }
    }

    pub fn with_view(mut self, view: ImageView) -> Self {
        self.view = view;
        self
    }
}

struct Signature {
    color: [f64; 3],
    frequency: f64,
}

fn signature(spec: &SynthSpec, class: usize) -> Signature {
    let mut rng = seed::rng_from(&[spec.seed, 0x51c, class as u64]);
    // Class directions are fixed points on the colour cube; the jitter keeps
    // them distinct for any class count.
    let dir: [f64; 3] = core::array::from_fn(|c| {
        let angle = 2.0 * PI * (class as f64 / spec.n_classes as f64) + c as f64 * 2.0 * PI / 3.0;
        Float::cos(angle) + rng.gen_range(-0.15..0.15)
    });
    let color = core::array::from_fn(|c| CENTER + spec.separability * COLOR_SPREAD * dir[c]);
    let frequency =
        BASE_FREQUENCY * (1.0 + 0.5 * spec.separability * (class as f64 / spec.n_classes as f64));
    Signature { color, frequency }
}

/// Renders `n_classes × images_per_class` square RGB images.
pub fn gen_synthetic_dataset(spec: &SynthSpec) -> Result<Vec<SourceImage>> {
    if spec.n_classes < 2 || spec.n_classes > ClassKey::ALL.len() {
        return Err(Error::InvalidArgument(format!(
            "n_classes must be in 2..={}, got {}",
            ClassKey::ALL.len(),
            spec.n_classes
        )));
    }
    if !(spec.separability >= 0.0) || spec.separability.is_infinite() {
        return Err(Error::InvalidArgument("separability must be a finite value >= 0".into()));
    }
    if spec.image_size == 0 || spec.images_per_class == 0 {
        return Err(Error::InvalidArgument("image_size and images_per_class must be >= 1".into()));
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let size = spec.image_size;
    let mut out = Vec::with_capacity(spec.n_classes * spec.images_per_class);
    for class in 0..spec.n_classes {
        let key = ClassKey::ALL[class];
        let sig = signature(spec, class);
        for i in 0..spec.images_per_class {
            let mut rng = seed::rng_from(&[spec.seed, 0x1a6e, class as u64, i as u64]);
            let theta = rng.gen_range(0.0..PI);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let brightness = rng.gen_range(-8.0..8.0);
            let (dx, dy) = (Float::cos(theta), Float::sin(theta));
            let mut pixels = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                for x in 0..size {
                    let t = (x as f64 * dx + y as f64 * dy) / size as f64;
                    let stripe = STRIPE_AMPLITUDE * Float::sin(2.0 * PI * sig.frequency * t + phase);
                    for c in 0..3 {
                        let v = sig.color[c] + brightness + stripe + noise.sample(&mut rng);
                        pixels.push(Float::round(v).clamp(0.0, 255.0) as u8);
                    }
                }
            }
            out.push(SourceImage::new(
                format!("synth_{}_{}_{:04}", spec.view, key, i),
                key,
                spec.view,
                size,
                size,
                pixels,
            )?);
        }
    }
    Ok(out)
}
