//! Training-data budgets and N-way K-shot episode sampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassKey, DatasetManifest, Split};
use crate::seed::{self, hash_str};
use crate::{Error, Result};

pub const DEFAULT_QUERIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, n_query: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            n_way,
            k_shot,
            n_query,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.n_query < 1 {
            return Err(Error::InvalidArgument(format!(
                "episode spec needs n_way >= 2, k_shot >= 1, n_query >= 1 (got {}, {}, {})",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.k_shot + self.n_query
    }
}

/// Per-class selection of record indices from one split of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedDataset {
    pub split: Split,
    pub fraction: f64,
    pub seed: u64,
    /// Sorted manifest record indices per class.
    pub selected: BTreeMap<ClassKey, Vec<usize>>,
    /// Hash of the sorted selected patch ids.
    pub selection_hash: u64,
}

impl BudgetedDataset {
    pub fn len(&self) -> usize {
        self.selected.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.values().flatten().copied()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassKey> + '_ {
        self.selected
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| *k)
    }
}

/// `round(fraction × count)` with halves rounded up.
pub fn budget_count(fraction: f64, count: usize) -> usize {
    let raw = fraction * count as f64;
    (num_traits::Float::floor(raw + 0.5) as usize).min(count)
}

fn selection_hash(manifest: &DatasetManifest, selected: &BTreeMap<ClassKey, Vec<usize>>) -> u64 {
    let mut ids: Vec<&str> = selected
        .values()
        .flatten()
        .map(|&i| manifest.records[i].patch_id.as_str())
        .collect();
    ids.sort_unstable();
    ids.iter()
        .fold(seed::mix64(ids.len() as u64), |h, id| seed::mix64(h ^ hash_str(id)))
}

/// Stratified seeded subsample of the train split, without replacement.
pub fn apply_budget(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<BudgetedDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "budget fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<ClassKey, Vec<usize>> = BTreeMap::new();
    for i in manifest.indices(Split::Train) {
        by_class.entry(manifest.records[i].class_key).or_default().push(i);
    }
    let mut selected = BTreeMap::new();
    for (class, pool) in by_class {
        let n = budget_count(fraction, pool.len());
        let mut rng = seed::rng_from(&[seed, 0xb0d6, class.index() as u64]);
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        picked.sort_unstable();
        selected.insert(class, picked);
    }
    let selection_hash = selection_hash(manifest, &selected);
    Ok(BudgetedDataset {
        split: Split::Train,
        fraction,
        seed,
        selected,
        selection_hash,
    })
}

/// The whole test split, grouped by class, for evaluation episodes.
pub fn test_pool(manifest: &DatasetManifest, seed: u64) -> BudgetedDataset {
    let mut selected: BTreeMap<ClassKey, Vec<usize>> = BTreeMap::new();
    for i in manifest.indices(Split::Test) {
        selected.entry(manifest.records[i].class_key).or_default().push(i);
    }
    let selection_hash = selection_hash(manifest, &selected);
    BudgetedDataset {
        split: Split::Test,
        fraction: 1.0,
        seed,
        selected,
        selection_hash,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeItem {
    /// Manifest record index.
    pub record: usize,
    /// Position of the item's class in [`Episode::classes`].
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub index: u64,
    pub classes: Vec<ClassKey>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|i| i.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|i| i.label).collect()
    }
}

/// Draws episode `episode_index`. The RNG stream is keyed on
/// `(data.seed, spec.seed, episode_index)` only.
pub fn sample_episode(data: &BudgetedDataset, spec: &EpisodeSpec, episode_index: u64) -> Result<Episode> {
    spec.validate()?;
    let mut rng = seed::rng_from(&[data.seed, spec.seed, episode_index]);
    let mut classes: Vec<ClassKey> = data.classes().collect();
    if classes.len() < spec.n_way {
        return Err(Error::InsufficientClasses {
            requested: spec.n_way,
            available: classes.len(),
        });
    }
    classes.shuffle(&mut rng);
    classes.truncate(spec.n_way);

    let need = spec.per_class();
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.n_query);
    for (label, class) in classes.iter().enumerate() {
        let pool = &data.selected[class];
        if pool.len() < need {
            return Err(Error::InsufficientPatches {
                class: *class,
                available: pool.len(),
                required: need,
            });
        }
        let draw = index::sample(&mut rng, pool.len(), need);
        for (j, pick) in draw.into_iter().enumerate() {
            let item = EpisodeItem {
                record: pool[pick],
                label,
            };
            if j < spec.k_shot {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    Ok(Episode {
        index: episode_index,
        classes,
        support,
        query,
    })
}

/// Lazy sequence of episodes `0..count`.
#[derive(Debug, Clone)]
pub struct EpisodeStream<'a> {
    data: &'a BudgetedDataset,
    spec: EpisodeSpec,
    next: u64,
    count: u64,
}

impl Iterator for EpisodeStream<'_> {
    type Item = Result<Episode>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let ep = sample_episode(self.data, &self.spec, self.next);
        self.next += 1;
        Some(ep)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for EpisodeStream<'_> {}

pub fn episode_stream<'a>(data: &'a BudgetedDataset, spec: &EpisodeSpec, count: u64) -> Result<EpisodeStream<'a>> {
    if count == 0 {
        return Err(Error::InvalidArgument("episode count must be >= 1".into()));
    }
    spec.validate()?;
    Ok(EpisodeStream {
        data,
        spec: *spec,
        next: 0,
        count,
    })
}
