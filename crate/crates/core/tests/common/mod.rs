//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use protonet_core::dataset::{
    extract_patches, ChannelStats, ClassKey, DatasetManifest, ImageView, PatchRecord, Pixels, Split, View,
};
use protonet_core::nn::{Encoder, Tensor};
use protonet_core::proto::{episode_objective, loss_and_gradients};
use protonet_core::synth::{gen_synthetic_dataset, SynthSpec};
use protonet_core::Real;

/// Synthetic corpus cut into patches and split 80/20 by image.
pub fn synthetic_manifest(spec: &SynthSpec, patches_per_class: usize, patch_size: usize) -> DatasetManifest {
    let images = gen_synthetic_dataset(spec).expect("synthetic images");
    let patches = extract_patches(&images, patches_per_class, patch_size, spec.seed).expect("patches");
    DatasetManifest::assemble(View::from(spec.view), patches, 0.8, spec.seed).expect("manifest")
}

fn record(class: ClassKey, image: usize, j: usize) -> PatchRecord {
    let image_id = format!("{class}_img{image:03}");
    PatchRecord {
        patch_id: format!("{image_id}_p{j:04}"),
        source_image_id: image_id,
        class_key: class,
        view: ImageView::Sur,
        origin: (0, 0),
        size: 1,
        pixels: Pixels::Raw(vec![j as u8, image as u8, class.index() as u8]),
    }
}

/// Balanced manifest of 1-pixel patches with a fixed split: every class has
/// `train` train patches and `test` test patches, `per_image` per image.
pub fn counted_manifest(classes: &[ClassKey], train: usize, test: usize, per_image: usize) -> DatasetManifest {
    let mut records = Vec::new();
    let mut split = BTreeMap::new();
    for &class in classes {
        for (n, s) in [(train, Split::Train), (test, Split::Test)] {
            let first_image = if s == Split::Train { 0 } else { 500 };
            for i in 0..n {
                let r = record(class, first_image + i / per_image, i % per_image);
                split.insert(r.patch_id.clone(), s);
                records.push(r);
            }
        }
    }
    let id = "split-fixture".to_string();
    DatasetManifest::new(View::Sur, records, split, id.clone(), ChannelStats::identity(id), 0).expect("manifest")
}

pub fn trainable_grads<T: Real>(encoder: &Encoder<T>) -> Vec<f64> {
    let mut out = Vec::new();
    encoder.visit(&mut |_, p| {
        if p.is_trainable() {
            out.extend(p.grad.iter().map(|g| g.as_f64()));
        }
    });
    out
}

fn nudge<T: Real>(encoder: &mut Encoder<T>, index: usize, delta: f64) {
    let mut offset = 0;
    encoder.visit_mut(&mut |_, p| {
        if !p.is_trainable() {
            return;
        }
        if (offset..offset + p.value.len()).contains(&index) {
            let v = &mut p.value[index - offset];
            *v = T::from_f64(v.as_f64() + delta);
        }
        offset += p.value.len();
    });
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub parameters: usize,
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, ‖a‖∞)`.
    pub worst_relative: f64,
    pub worst_absolute: f64,
    /// `‖a − n‖₂ / ‖a‖₂`.
    pub norm_relative: f64,
    pub grad_scale: f64,
}

/// Analytic episode-loss gradient against central differences with step
/// `h`, for every trainable parameter of `encoder`.
pub fn gradient_check<T: Real>(
    encoder: &mut Encoder<T>,
    input: &Tensor<T>,
    support: &[usize],
    query: &[usize],
    n_way: usize,
    h: f64,
) -> GradCheck {
    loss_and_gradients(encoder, input, support, query, n_way).expect("loss");
    let analytic = trainable_grads(encoder);
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let objective = |e: &Encoder<T>| episode_objective(e, input, support, query, n_way).expect("objective").as_f64();
    let (mut worst_rel, mut worst_abs, mut diff2, mut norm2) = (0.0f64, 0.0f64, 0.0, 0.0);
    for (i, &a) in analytic.iter().enumerate() {
        nudge(encoder, i, h);
        let plus = objective(encoder);
        nudge(encoder, i, -2.0 * h);
        let minus = objective(encoder);
        nudge(encoder, i, h);
        let numeric = (plus - minus) / (2.0 * h);
        let err = (a - numeric).abs();
        worst_abs = worst_abs.max(err);
        worst_rel = worst_rel.max(err / a.abs().max(numeric.abs()).max(scale));
        diff2 += err * err;
        norm2 += a * a;
    }
    GradCheck {
        parameters: analytic.len(),
        worst_relative: worst_rel,
        worst_absolute: worst_abs,
        norm_relative: (diff2 / norm2).sqrt(),
        grad_scale: scale,
    }
}
