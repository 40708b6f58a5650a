//! Patch extraction, standardization and leakage-free train/test splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{self, hash_str};
use crate::{Error, Real, Result};

/// Default edge length of a square patch.
pub const PATCH_SIZE: usize = 256;
pub const CHANNELS: usize = 3;

/// Stone subtype label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassKey {
    Ww,
    Wd,
    Ua,
    Str,
    Bru,
    Cys,
}

impl ClassKey {
    pub const ALL: [ClassKey; 6] = [
        ClassKey::Ww,
        ClassKey::Wd,
        ClassKey::Ua,
        ClassKey::Str,
        ClassKey::Bru,
        ClassKey::Cys,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassKey::Ww => "WW",
            ClassKey::Wd => "WD",
            ClassKey::Ua => "UA",
            ClassKey::Str => "STR",
            ClassKey::Bru => "BRU",
            ClassKey::Cys => "CYS",
        }
    }
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class key `{s}`")))
    }
}

/// Acquisition view of a source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ImageView {
    Sur,
    Sec,
}

impl ImageView {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageView::Sur => "SUR",
            ImageView::Sec => "SEC",
        }
    }
}

impl fmt::Display for ImageView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImageView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUR" => Ok(ImageView::Sur),
            "SEC" => Ok(ImageView::Sec),
            _ => Err(Error::InvalidArgument(format!("unknown image view `{s}`"))),
        }
    }
}

/// Dataset view: a single acquisition view or their union.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum View {
    Sur,
    Sec,
    Mix,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Sur => "SUR",
            View::Sec => "SEC",
            View::Mix => "MIX",
        }
    }
}

impl From<ImageView> for View {
    fn from(v: ImageView) -> Self {
        match v {
            ImageView::Sur => View::Sur,
            ImageView::Sec => View::Sec,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUR" => Ok(View::Sur),
            "SEC" => Ok(View::Sec),
            "MIX" => Ok(View::Mix),
            _ => Err(Error::InvalidArgument(format!("unknown view `{s}`"))),
        }
    }
}

/// A full-resolution RGB image, pixels interleaved row-major (`H×W×3`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceImage {
    pub image_id: String,
    pub class_key: ClassKey,
    pub view: ImageView,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl SourceImage {
    pub fn new(
        image_id: impl Into<String>,
        class_key: ClassKey,
        view: ImageView,
        width: usize,
        height: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if pixels.len() != width * height * CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: width * height * CHANNELS,
                got: pixels.len(),
            });
        }
        Ok(Self {
            image_id: image_id.into(),
            class_key,
            view,
            width,
            height,
            pixels,
        })
    }
}

/// Patch payload: raw 8-bit, or real-valued after standardization.
#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    Raw(Vec<u8>),
    Standardized(Vec<f64>),
}

impl Pixels {
    pub fn len(&self) -> usize {
        match self {
            Pixels::Raw(p) => p.len(),
            Pixels::Standardized(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One square crop (`size×size×3`, interleaved) with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub patch_id: String,
    pub source_image_id: String,
    pub class_key: ClassKey,
    pub view: ImageView,
    /// Crop origin `(x, y)` in the source image.
    pub origin: (usize, usize),
    pub size: usize,
    pub pixels: Pixels,
}

impl PatchRecord {
    pub fn standardized(&self) -> bool {
        matches!(self.pixels, Pixels::Standardized(_))
    }

    /// Writes the patch as planar `3×size×size` values into `out`,
    /// standardizing raw pixels with `stats` on the way.
    pub fn write_chw<T: Real>(&self, stats: &ChannelStats, out: &mut [T]) -> Result<()> {
        let plane = self.size * self.size;
        if out.len() != plane * CHANNELS || self.pixels.len() != plane * CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: plane * CHANNELS,
                got: out.len(),
            });
        }
        match &self.pixels {
            Pixels::Raw(raw) => {
                let inv: [f64; 3] = core::array::from_fn(|c| 1.0 / stats.std[c]);
                for (p, px) in raw.chunks_exact(CHANNELS).enumerate() {
                    for c in 0..CHANNELS {
                        out[c * plane + p] =
                            T::from_f64((f64::from(px[c]) - stats.mean[c]) * inv[c]);
                    }
                }
            }
            Pixels::Standardized(v) => {
                for (p, px) in v.chunks_exact(CHANNELS).enumerate() {
                    for c in 0..CHANNELS {
                        out[c * plane + p] = T::from_f64(px[c]);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-channel mean and population standard deviation, tagged with the id
/// of the training split they were computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub scope: String,
}

impl ChannelStats {
    pub fn identity(scope: impl Into<String>) -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            scope: scope.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Split membership decided per source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub id: String,
    pub by_image: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, record: &PatchRecord) -> Option<Split> {
        self.by_image.get(&record.source_image_id).copied()
    }

    pub fn images(&self, split: Split) -> impl Iterator<Item = &str> {
        self.by_image
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }
}

/// Number of patches each image contributes to its class quota: an even
/// share, with the remainder going to the lexicographically first images.
/// Returned in the input order of `images`.
pub fn allocate_quota(
    images: &[SourceImage],
    classes: &[ClassKey],
    per_class_quota: usize,
) -> Result<Vec<usize>> {
    if per_class_quota == 0 {
        return Err(Error::InvalidArgument("per_class_quota must be >= 1".into()));
    }
    let mut by_class: BTreeMap<ClassKey, Vec<usize>> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        by_class.entry(img.class_key).or_default().push(i);
    }
    for class in classes {
        if !by_class.contains_key(class) {
            return Err(Error::EmptyClass(*class));
        }
    }
    let mut counts = vec![0usize; images.len()];
    for members in by_class.values_mut() {
        members.sort_by(|&a, &b| images[a].image_id.cmp(&images[b].image_id));
        let base = per_class_quota / members.len();
        let extra = per_class_quota % members.len();
        for (rank, &i) in members.iter().enumerate() {
            counts[i] = base + usize::from(rank < extra);
        }
    }
    Ok(counts)
}

/// Crops `count` patches from one image with origins drawn uniformly over
/// every valid position. The stream is keyed on `seed ⊕ hash(image_id)`.
pub fn crop_patches(
    image: &SourceImage,
    count: usize,
    patch_size: usize,
    seed: u64,
) -> Result<Vec<PatchRecord>> {
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch_size must be >= 1".into()));
    }
    if image.width < patch_size || image.height < patch_size {
        return Err(Error::ImageTooSmall {
            image_id: image.image_id.clone(),
            width: image.width,
            height: image.height,
            patch_size,
        });
    }
    let mut rng = seed::image_rng(seed, &image.image_id);
    let row_len = patch_size * CHANNELS;
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let x = rng.gen_range(0..=image.width - patch_size);
        let y = rng.gen_range(0..=image.height - patch_size);
        let mut pixels = Vec::with_capacity(patch_size * row_len);
        for row in y..y + patch_size {
            let start = (row * image.width + x) * CHANNELS;
            pixels.extend_from_slice(&image.pixels[start..start + row_len]);
        }
        out.push(PatchRecord {
            patch_id: format!("{}_p{:04}", image.image_id, j),
            source_image_id: image.image_id.clone(),
            class_key: image.class_key,
            view: image.view,
            origin: (x, y),
            size: patch_size,
            pixels: Pixels::Raw(pixels),
        });
    }
    Ok(out)
}

/// Extracts exactly `per_class_quota` patches for every class present in
/// `images`.
pub fn extract_patches(
    images: &[SourceImage],
    per_class_quota: usize,
    patch_size: usize,
    seed: u64,
) -> Result<Vec<PatchRecord>> {
    let classes: BTreeSet<ClassKey> = images.iter().map(|i| i.class_key).collect();
    let classes: Vec<ClassKey> = classes.into_iter().collect();
    extract_patches_for(images, &classes, per_class_quota, patch_size, seed)
}

/// As [`extract_patches`], but fails if any of `classes` has no image.
pub fn extract_patches_for(
    images: &[SourceImage],
    classes: &[ClassKey],
    per_class_quota: usize,
    patch_size: usize,
    seed: u64,
) -> Result<Vec<PatchRecord>> {
    let counts = allocate_quota(images, classes, per_class_quota)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| {
        (images[a].class_key, &images[a].image_id).cmp(&(images[b].class_key, &images[b].image_id))
    });
    let mut out = Vec::with_capacity(counts.iter().sum());
    for i in order {
        out.extend(crop_patches(&images[i], counts[i], patch_size, seed)?);
    }
    Ok(out)
}

/// Two-pass per-channel mean and population standard deviation.
pub fn compute_channel_stats(patches: &[PatchRecord], scope: &str) -> Result<ChannelStats> {
    if patches.is_empty() {
        return Err(Error::Empty("channel statistics need at least one patch"));
    }
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for p in patches {
        let Pixels::Raw(raw) = &p.pixels else {
            return Err(Error::AlreadyStandardized(p.patch_id.clone()));
        };
        for px in raw.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                sum[c] += f64::from(px[c]);
            }
        }
        n += raw.len() / CHANNELS;
    }
    if n == 0 {
        return Err(Error::Empty("patches carry no pixels"));
    }
    let mean = sum.map(|s| s / n as f64);
    let mut sq = [0.0f64; 3];
    for p in patches {
        if let Pixels::Raw(raw) = &p.pixels {
            for px in raw.chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    let d = f64::from(px[c]) - mean[c];
                    sq[c] += d * d;
                }
            }
        }
    }
    let std = sq.map(|s| Float::sqrt(s / n as f64));
    if let Some(c) = std.iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroVariance(c));
    }
    Ok(ChannelStats {
        mean,
        std,
        scope: scope.to_string(),
    })
}

/// `(x − m_c) / σ_c` per channel.
pub fn standardize(patch: &PatchRecord, stats: &ChannelStats) -> Result<PatchRecord> {
    let Pixels::Raw(raw) = &patch.pixels else {
        return Err(Error::AlreadyStandardized(patch.patch_id.clone()));
    };
    if let Some(c) = stats.std.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::ZeroVariance(c));
    }
    let values = raw
        .chunks_exact(CHANNELS)
        .flat_map(|px| (0..CHANNELS).map(move |c| (f64::from(px[c]) - stats.mean[c]) / stats.std[c]))
        .collect();
    Ok(PatchRecord {
        pixels: Pixels::Standardized(values),
        ..patch.clone()
    })
}

/// Inverse of [`standardize`]: `x·σ_c + m_c`, as reals.
pub fn unstandardize(patch: &PatchRecord, stats: &ChannelStats) -> Result<Vec<f64>> {
    let Pixels::Standardized(v) = &patch.pixels else {
        return Err(Error::InvalidArgument(format!(
            "patch {} is not standardized",
            patch.patch_id
        )));
    };
    Ok(v
        .chunks_exact(CHANNELS)
        .flat_map(|px| (0..CHANNELS).map(move |c| px[c] * stats.std[c] + stats.mean[c]))
        .collect())
}

/// Assigns whole source images to train or test so that roughly
/// `train_fraction` of each class's patches land in train.
///
/// Images of a class are visited in a seeded random order; each is put in
/// train when doing so moves the train patch count closer to the target.
/// The result is within one image's patch mass of the target, and both
/// splits are nonempty for every class.
pub fn split_by_image(
    patches: &[PatchRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    // class -> image -> patch count
    let mut mass: BTreeMap<ClassKey, BTreeMap<&str, usize>> = BTreeMap::new();
    for p in patches {
        *mass
            .entry(p.class_key)
            .or_default()
            .entry(p.source_image_id.as_str())
            .or_default() += 1;
    }
    let mut by_image = BTreeMap::new();
    for (class, images) in &mass {
        if images.len() < 2 {
            return Err(Error::SingleImageClass { class: *class });
        }
        let mut order: Vec<(&str, usize)> = images.iter().map(|(k, v)| (*k, *v)).collect();
        let mut rng = seed::rng_from(&[seed, 0x5b1f, class.index() as u64]);
        order.shuffle(&mut rng);

        let total: usize = order.iter().map(|(_, m)| m).sum();
        let target = train_fraction * total as f64;
        let mut train_mass = 0usize;
        let mut assigned: Vec<(&str, usize, Split)> = Vec::with_capacity(order.len());
        for (id, m) in order {
            let with = (train_mass + m) as f64 - target;
            let without = train_mass as f64 - target;
            if with.abs() < without.abs() {
                train_mass += m;
                assigned.push((id, m, Split::Train));
            } else {
                assigned.push((id, m, Split::Test));
            }
        }
        rebalance_nonempty(&mut assigned, Split::Train);
        rebalance_nonempty(&mut assigned, Split::Test);
        for (id, _, s) in assigned {
            by_image.insert(id.to_string(), s);
        }
    }
    let mut h = seed::mix64(seed);
    for (id, s) in &by_image {
        if *s == Split::Train {
            h = seed::mix64(h ^ hash_str(id));
        }
    }
    Ok(SplitAssignment {
        id: format!("split-{h:016x}"),
        by_image,
    })
}

/// Moves the smallest image from the other split if `want` is empty.
fn rebalance_nonempty(assigned: &mut [(&str, usize, Split)], want: Split) {
    if assigned.iter().any(|a| a.2 == want) {
        return;
    }
    if let Some(a) = assigned.iter_mut().min_by_key(|a| (a.1, a.0)) {
        a.2 = want;
    }
}

/// A view's patch set with its split and standardization statistics.
///
/// Records are kept raw; standardized values are produced on demand from
/// `channel_stats`, which are always computed on the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub view: View,
    pub records: Vec<PatchRecord>,
    pub split: BTreeMap<String, Split>,
    pub split_id: String,
    pub channel_stats: ChannelStats,
    pub seed: u64,
}

impl DatasetManifest {
    /// Validates and wraps already-split records.
    pub fn new(
        view: View,
        records: Vec<PatchRecord>,
        split: BTreeMap<String, Split>,
        split_id: String,
        channel_stats: ChannelStats,
        seed: u64,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.patch_id.as_str()) {
                return Err(Error::DuplicatePatchId(r.patch_id.clone()));
            }
            if !split.contains_key(&r.patch_id) {
                return Err(Error::UnknownPatch(r.patch_id.clone()));
            }
        }
        if split.len() != records.len() {
            return Err(Error::InvalidArgument(
                "split map lists patches that are not in the manifest".into(),
            ));
        }
        if channel_stats.scope != split_id {
            return Err(Error::ScopeMismatch {
                stats: channel_stats.scope,
                split: split_id,
            });
        }
        Ok(Self {
            view,
            records,
            split,
            split_id,
            channel_stats,
            seed,
        })
    }

    /// Splits raw patches by image and computes train-split statistics.
    pub fn assemble(
        view: View,
        records: Vec<PatchRecord>,
        train_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("a manifest needs at least one patch"));
        }
        let assignment = split_by_image(&records, train_fraction, seed)?;
        let mut split = BTreeMap::new();
        let mut train = Vec::new();
        for r in &records {
            let s = assignment
                .split_of(r)
                .ok_or_else(|| Error::UnknownPatch(r.patch_id.clone()))?;
            split.insert(r.patch_id.clone(), s);
            if s == Split::Train {
                train.push(r.clone());
            }
        }
        let stats = compute_channel_stats(&train, &assignment.id)?;
        Self::new(view, records, split, assignment.id, stats, seed)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.split[&self.records[index].patch_id]
    }

    pub fn indices(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        (0..self.records.len()).filter(move |&i| self.split_of(i) == split)
    }

    pub fn class_counts(&self) -> BTreeMap<ClassKey, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.class_key).or_default() += 1;
        }
        out
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.records.first().map(|r| r.size)
    }

    /// The standardized record at `index`, checking the stats scope.
    pub fn standardized(&self, index: usize) -> Result<PatchRecord> {
        if self.channel_stats.scope != self.split_id {
            return Err(Error::ScopeMismatch {
                stats: self.channel_stats.scope.clone(),
                split: self.split_id.clone(),
            });
        }
        standardize(&self.records[index], &self.channel_stats)
    }
}

/// Read access to standardized patches, in planar channel-first layout.
pub trait PatchSource {
    fn patch_count(&self) -> usize;
    fn patch_size(&self) -> usize;
    fn patch_id(&self, index: usize) -> &str;
    fn class_of(&self, index: usize) -> ClassKey;
    fn write_patch<T: Real>(&self, index: usize, out: &mut [T]) -> Result<()>;
}

impl PatchSource for DatasetManifest {
    fn patch_count(&self) -> usize {
        self.records.len()
    }

    fn patch_size(&self) -> usize {
        self.records.first().map_or(0, |r| r.size)
    }

    fn patch_id(&self, index: usize) -> &str {
        &self.records[index].patch_id
    }

    fn class_of(&self, index: usize) -> ClassKey {
        self.records[index].class_key
    }

    fn write_patch<T: Real>(&self, index: usize, out: &mut [T]) -> Result<()> {
        let record = self
            .records
            .get(index)
            .ok_or_else(|| Error::UnknownPatch(format!("#{index}")))?;
        if self.channel_stats.scope != self.split_id {
            return Err(Error::ScopeMismatch {
                stats: self.channel_stats.scope.clone(),
                split: self.split_id.clone(),
            });
        }
        record.write_chw(&self.channel_stats, out)
    }
}

/// Union of a SUR and a SEC manifest. Split labels carry over; channel
/// statistics are recomputed on the combined train split.
pub fn build_view(sur: &DatasetManifest, sec: &DatasetManifest) -> Result<DatasetManifest> {
    if sur.is_empty() || sec.is_empty() {
        return Err(Error::Empty("both views must be nonempty"));
    }
    if sur.view == View::Mix || sec.view == View::Mix {
        return Err(Error::InvalidArgument("inputs must be single-view manifests".into()));
    }
    let mut records = Vec::with_capacity(sur.len() + sec.len());
    let mut split = sur.split.clone();
    records.extend(sur.records.iter().cloned());
    for r in &sec.records {
        if split.insert(r.patch_id.clone(), sec.split[&r.patch_id]).is_some() {
            return Err(Error::DuplicatePatchId(r.patch_id.clone()));
        }
        records.push(r.clone());
    }
    let split_id = format!(
        "split-{:016x}",
        seed::derive(&[hash_str(&sur.split_id), hash_str(&sec.split_id)])
    );
    let train: Vec<PatchRecord> = records
        .iter()
        .filter(|r| split[&r.patch_id] == Split::Train)
        .cloned()
        .collect();
    let stats = compute_channel_stats(&train, &split_id)?;
    DatasetManifest::new(
        View::Mix,
        records,
        split,
        split_id,
        stats,
        seed::derive(&[sur.seed, sec.seed]),
    )
}
