//! Resumable experiment grid over on-disk manifests.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use protonet_core::dataset::{DatasetManifest, View};
use protonet_core::episode::Episode;
use protonet_core::experiment::{
    completed_hashes, run_cell_with, CellOutcome, ExperimentConfig, GridSpec, ResultRow,
};
use protonet_core::metrics::EpisodeMetrics;
use protonet_core::nn::{Encoder, EncoderKind};
use protonet_core::proto::evaluate_episode;
use protonet_core::Real;

use crate::checkpoint::{load_pretrained, save_model, CheckpointMeta};
use crate::error::{Error, Result};
use crate::manifest::{read_manifest, MANIFEST_FILE};
use crate::results::{read_rows, ResultsLog};
use crate::ARTIFACT_VERSION;

/// Manifests by view.
#[derive(Debug, Default)]
pub struct ManifestStore {
    manifests: BTreeMap<View, DatasetManifest>,
}

impl ManifestStore {
    pub fn insert(&mut self, manifest: DatasetManifest) {
        self.manifests.insert(manifest.view, manifest);
    }

    pub fn get(&self, view: View) -> Option<&DatasetManifest> {
        self.manifests.get(&view)
    }

    /// Loads `<root>/<VIEW>/manifest.json` for each requested view.
    pub fn load(root: &Path, views: &[View]) -> Result<Self> {
        let mut store = Self::default();
        for &view in views {
            let dir = root.join(view.as_str());
            if !dir.join(MANIFEST_FILE).is_file() {
                return Err(Error::Invalid(format!("no manifest for view {view} under {}", root.display())));
            }
            let m = read_manifest(&dir)?;
            if m.view != view {
                return Err(Error::Invalid(format!("{} holds a {} manifest", dir.display(), m.view)));
            }
            store.insert(m);
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    /// Directory of `<backbone>.bin` torchvision-named weight blobs.
    pub pretrained_dir: Option<PathBuf>,
    /// Saves each finished cell's model as `<dir>/<config hash>`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate test episodes on the rayon pool.
    pub parallel_eval: bool,
    /// Stop after this many newly executed cells.
    pub max_cells: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSummary {
    pub total: usize,
    pub skipped: usize,
    pub executed: usize,
    pub failed: usize,
    /// Cells still pending when `max_cells` stopped the run.
    pub remaining: usize,
}

/// The starting encoder of a cell: pretrained weights when a blob for the
/// backbone exists, otherwise a seeded random initialization.
pub fn build_encoder<T: Real>(config: &ExperimentConfig, pretrained_dir: Option<&Path>) -> Result<Encoder<T>> {
    let mut encoder = Encoder::new(config.backbone, config.cell_seed());
    if config.backbone == EncoderKind::TinyTestCnn {
        return Ok(encoder);
    }
    match pretrained_dir {
        Some(dir) => {
            let blob = dir.join(format!("{}.bin", config.backbone));
            let ignored = load_pretrained(&mut encoder, &blob)?;
            log::debug!("{}: ignored pretrained entries {ignored:?}", blob.display());
        }
        None => log::warn!("{}: no pretrained weights given, starting from random init", config.backbone),
    }
    Ok(encoder)
}

/// Episode scoring spread over the rayon pool; the result order follows
/// `episodes`.
pub fn parallel_evaluate<T: Real>(
    encoder: &Encoder<T>,
    episodes: &[Episode],
    manifest: &DatasetManifest,
) -> protonet_core::Result<Vec<EpisodeMetrics>> {
    episodes.par_iter().map(|e| evaluate_episode(encoder, e, manifest)).collect()
}

fn run_id(config_hash: &str) -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    format!("{config_hash}-{nanos:x}")
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs one cell and turns any error or panic into a failed row.
pub fn execute_cell(config: &ExperimentConfig, manifest: &DatasetManifest, options: &GridOptions) -> ResultRow {
    let started = Instant::now();
    let id = run_id(&config.config_hash());
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<CellOutcome<f32>> {
        let encoder = build_encoder(config, options.pretrained_dir.as_deref())?;
        let outcome = if options.parallel_eval {
            run_cell_with(config, manifest, encoder, parallel_evaluate)?
        } else {
            run_cell_with(config, manifest, encoder, |e, eps, m| {
                protonet_core::proto::evaluate(e, eps, m)
            })?
        };
        if let Some(dir) = &options.checkpoint_dir {
            let encoder = outcome.model.encoder();
            let meta = CheckpointMeta {
                backbone: encoder.kind,
                dim: encoder.dim,
                pretrained: encoder.pretrained,
                mode: config.mode,
                config_hash: config.config_hash(),
                step: outcome.report.train_steps,
                final_loss: outcome.report.final_loss,
                classes: match &outcome.model {
                    protonet_core::experiment::CellModel::Baseline(c) => Some(c.classes.clone()),
                    _ => None,
                },
                config: Some(*config),
                artifact_version: ARTIFACT_VERSION.into(),
            };
            save_model(&dir.join(config.config_hash()), &outcome.model, &meta)?;
        }
        Ok(outcome)
    }));
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(Ok(outcome)) => ResultRow::ok(*config, outcome.report, id, secs, ARTIFACT_VERSION),
        Ok(Err(e)) => ResultRow::failed(*config, e.to_string(), id, secs, ARTIFACT_VERSION),
        Err(p) => ResultRow::failed(*config, format!("panic: {}", panic_message(p)), id, secs, ARTIFACT_VERSION),
    }
}

/// Executes every cell of `grid` whose config hash has no successful row in
/// the log yet, appending one row per executed cell.
pub fn run_grid(
    grid: &GridSpec,
    store: &ManifestStore,
    log: &mut ResultsLog,
    options: &GridOptions,
) -> Result<GridSummary> {
    grid.validate()?;
    for &view in &grid.views {
        if store.get(view).is_none() {
            return Err(Error::Invalid(format!("no manifest loaded for view {view}")));
        }
    }
    let existing = read_rows(log.path())?;
    for (line, reason) in &existing.skipped {
        log::warn!("{}:{line}: unreadable row skipped ({reason})", log.path().display());
    }
    let total = grid.cells().len();
    let pending = grid.pending(&completed_hashes(&existing.rows));
    let mut summary = GridSummary {
        total,
        skipped: total - pending.len(),
        executed: 0,
        failed: 0,
        remaining: 0,
    };
    for (i, config) in pending.iter().enumerate() {
        if options.max_cells.is_some_and(|m| summary.executed >= m) {
            summary.remaining = pending.len() - i;
            break;
        }
        let manifest = store.get(config.view).expect("checked above");
        log::info!(
            "cell {}/{}: {} {} {} {} {}",
            summary.skipped + i + 1,
            total,
            config.mode,
            config.view,
            config.backbone,
            config.shots_label(),
            config.budget_fraction
        );
        let row = execute_cell(config, manifest, options);
        if let Some(reason) = &row.reason {
            log::warn!("cell {} failed: {reason}", row.config_hash);
            summary.failed += 1;
        }
        log.append(&row)?;
        summary.executed += 1;
    }
    Ok(summary)
}
