#![allow(dead_code)]

use protonet_core::dataset::{extract_patches, DatasetManifest, View};
use protonet_core::synth::{gen_synthetic_dataset, SynthSpec};

/// Six separable classes of five images, cut into small patches.
pub fn manifest(patches_per_class: usize, patch_size: usize, seed: u64) -> DatasetManifest {
    let spec = SynthSpec::new(6, 5, 24, 2.0, seed);
    let images = gen_synthetic_dataset(&spec).unwrap();
    let patches = extract_patches(&images, patches_per_class, patch_size, seed).unwrap();
    DatasetManifest::assemble(View::Sur, patches, 0.8, seed).unwrap()
}
