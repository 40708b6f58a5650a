//! Experiment cells, grids, result rows and table rendering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    epochs_for_steps, evaluate_baseline, train_baseline, Classifier, ClassifierConfig, DEFAULT_BATCH_SIZE,
};
use crate::dataset::{DatasetManifest, Split, View};
use crate::episode::{apply_budget, episode_stream, test_pool, BudgetedDataset, Episode, EpisodeSpec};
use crate::metrics::{aggregate, ClassificationMetrics, EpisodeMetrics, MetricsSummary};
use crate::nn::{Encoder, EncoderKind};
use crate::proto::{evaluate, train_episodic, TrainState};
use crate::seed::{self, hash_str};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Prototypical,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Prototypical => "prototypical",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prototypical" | "proto" => Ok(Mode::Prototypical),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}`"))),
        }
    }
}

pub const DEFAULT_TRAIN_ITERATIONS: usize = 1000;
pub const DEFAULT_EVAL_EPISODES: usize = 100;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// One grid cell. Baseline cells ignore `k_shot` and `n_query`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub view: View,
    pub backbone: EncoderKind,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub budget_fraction: f64,
    pub seed: u64,
    pub train_iterations: usize,
    pub eval_episodes: usize,
    pub learning_rate: f64,
    pub mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            view: View::Sur,
            backbone: EncoderKind::Resnet34,
            n_way: 6,
            k_shot: 10,
            n_query: crate::episode::DEFAULT_QUERIES,
            budget_fraction: 1.0,
            seed: 0,
            train_iterations: DEFAULT_TRAIN_ITERATIONS,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            learning_rate: DEFAULT_LEARNING_RATE,
            mode: Mode::Prototypical,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidArgument("n_way must be >= 2".into()));
        }
        if self.mode == Mode::Prototypical && (self.k_shot == 0 || self.n_query == 0) {
            return Err(Error::InvalidArgument("k_shot and n_query must be >= 1".into()));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "budget fraction must be in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        if self.train_iterations == 0 || self.eval_episodes == 0 {
            return Err(Error::InvalidArgument("iteration and episode counts must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }

    /// Stable hash of every field, hex encoded.
    pub fn config_hash(&self) -> String {
        let canonical = format!(
            "view={};backbone={};n_way={};k_shot={};n_query={};budget={:016x};seed={};iters={};episodes={};lr={:016x};mode={}",
            self.view,
            self.backbone,
            self.n_way,
            self.k_shot,
            self.n_query,
            self.budget_fraction.to_bits(),
            self.seed,
            self.train_iterations,
            self.eval_episodes,
            self.learning_rate.to_bits(),
            self.mode,
        );
        format!("{:016x}", hash_str(&canonical))
    }

    /// Seed for everything that may differ between cells: encoder init,
    /// training episodes, baseline shuffles.
    pub fn cell_seed(&self) -> u64 {
        seed::derive(&[self.seed, hash_str(&self.config_hash())])
    }

    /// Seed of the budget draw. Keyed on `(seed, view, fraction)` only, so
    /// every cell of a budget column, prototypical or baseline, trains on the
    /// same selection.
    pub fn budget_seed(&self) -> u64 {
        seed::derive(&[self.seed, hash_str(self.view.as_str()), self.budget_fraction.to_bits()])
    }

    /// Seed of the test-episode stream; shared by all cells of a view.
    pub fn eval_seed(&self) -> u64 {
        seed::derive(&[self.seed, hash_str(self.view.as_str()), 0x7e57])
    }

    pub fn train_spec(&self) -> Result<EpisodeSpec> {
        EpisodeSpec::new(self.n_way, self.k_shot, self.n_query, self.cell_seed())
    }

    /// Test episodes use the training way/shot/query setting.
    pub fn eval_spec(&self) -> Result<EpisodeSpec> {
        EpisodeSpec::new(self.n_way, self.k_shot, self.n_query, self.eval_seed())
    }

    /// Fields that differ from the reference schedule.
    pub fn overrides(&self) -> Vec<String> {
        let d = Self::default();
        let mut out = Vec::new();
        if self.train_iterations != d.train_iterations {
            out.push(format!("train_iterations={}", self.train_iterations));
        }
        if self.eval_episodes != d.eval_episodes {
            out.push(format!("eval_episodes={}", self.eval_episodes));
        }
        if self.learning_rate != d.learning_rate {
            out.push(format!("learning_rate={}", self.learning_rate));
        }
        if self.n_query != d.n_query && self.mode == Mode::Prototypical {
            out.push(format!("n_query={}", self.n_query));
        }
        out
    }

    pub fn shots_label(&self) -> String {
        match self.mode {
            Mode::Prototypical => format!("{}-{}", self.n_way, self.k_shot),
            Mode::Baseline => "--".to_string(),
        }
    }
}

/// Cartesian grid over views, backbones, shots and budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub views: Vec<View>,
    pub backbones: Vec<EncoderKind>,
    pub shots: Vec<usize>,
    pub budgets: Vec<f64>,
    /// Prototypical cells span every shot; a baseline cell exists once per
    /// (view, backbone, budget).
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub n_way: usize,
    pub n_query: usize,
    pub train_iterations: usize,
    pub eval_episodes: usize,
    pub learning_rate: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        let base = ExperimentConfig::default();
        Self {
            views: vec![View::Sur, View::Sec, View::Mix],
            backbones: vec![EncoderKind::Resnet18, EncoderKind::Resnet34, EncoderKind::Resnet50],
            shots: vec![5, 10, 15, 20],
            budgets: vec![1.0, 0.75, 0.5, 0.25],
            modes: vec![Mode::Prototypical],
            seed: base.seed,
            n_way: base.n_way,
            n_query: base.n_query,
            train_iterations: base.train_iterations,
            eval_episodes: base.eval_episodes,
            learning_rate: base.learning_rate,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("views", self.views.len()),
            ("backbones", self.backbones.len()),
            ("shots", self.shots.len()),
            ("budgets", self.budgets.len()),
            ("modes", self.modes.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidArgument(format!("grid axis `{name}` is empty")));
        }
        for c in self.cells() {
            c.validate()?;
        }
        Ok(())
    }

    /// All cells in a fixed order: view, backbone, mode, shot, budget.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &view in &self.views {
            for &backbone in &self.backbones {
                for &mode in &self.modes {
                    let shots: &[usize] = match mode {
                        Mode::Prototypical => &self.shots,
                        Mode::Baseline => &[0],
                    };
                    for &k_shot in shots {
                        for &budget_fraction in &self.budgets {
                            out.push(ExperimentConfig {
                                view,
                                backbone,
                                n_way: self.n_way,
                                k_shot,
                                n_query: if mode == Mode::Baseline { 0 } else { self.n_query },
                                budget_fraction,
                                seed: self.seed,
                                train_iterations: self.train_iterations,
                                eval_episodes: self.eval_episodes,
                                learning_rate: self.learning_rate,
                                mode,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Cells whose config hash is not in `completed`.
    pub fn pending(&self, completed: &BTreeSet<String>) -> Vec<ExperimentConfig> {
        self.cells()
            .into_iter()
            .filter(|c| !completed.contains(&c.config_hash()))
            .collect()
    }
}

/// Mean and per-episode spread of one metric (fractions in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl From<&MetricsSummary> for MetricStat {
    fn from(s: &MetricsSummary) -> Self {
        Self { mean: s.mean, std: s.std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub accuracy: MetricStat,
    pub precision: MetricStat,
    pub recall: MetricStat,
    pub f1: MetricStat,
    /// Episodes averaged (prototypical) or 1 for a single baseline pass.
    pub episodes: usize,
}

impl RowMetrics {
    pub fn from_episodes(episodes: &[EpisodeMetrics]) -> Result<Self> {
        let pick = |f: fn(&ClassificationMetrics) -> f64| -> Result<MetricStat> {
            let v: Vec<f64> = episodes.iter().map(|e| f(&e.metrics)).collect();
            Ok(MetricStat::from(&aggregate(&v)?))
        };
        Ok(Self {
            accuracy: pick(|m| m.accuracy)?,
            precision: pick(|m| m.precision_macro)?,
            recall: pick(|m| m.recall_macro)?,
            f1: pick(|m| m.f1_macro)?,
            episodes: episodes.len(),
        })
    }

    pub fn single(m: &ClassificationMetrics) -> Self {
        let s = |mean| MetricStat { mean, std: None };
        Self {
            accuracy: s(m.accuracy),
            precision: s(m.precision_macro),
            recall: s(m.recall_macro),
            f1: s(m.f1_macro),
            episodes: 1,
        }
    }
}

/// Everything a finished cell reports besides timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub metrics: RowMetrics,
    /// Hash of the selected training patch ids.
    pub selection_hash: String,
    pub train_patches: usize,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
    pub baseline_epochs: Option<usize>,
    pub baseline_batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Distinguishes repeated runs of the same config.
    pub run_id: String,
    pub status: RowStatus,
    pub reason: Option<String>,
    pub report: Option<CellReport>,
    pub overrides: Vec<String>,
    pub wall_time_s: f64,
    pub artifact_version: String,
}

impl ResultRow {
    pub fn ok(config: ExperimentConfig, report: CellReport, run_id: String, wall_time_s: f64, version: &str) -> Self {
        Self {
            config_hash: config.config_hash(),
            overrides: config.overrides(),
            config,
            run_id,
            status: RowStatus::Ok,
            reason: None,
            report: Some(report),
            wall_time_s,
            artifact_version: version.to_string(),
        }
    }

    pub fn failed(config: ExperimentConfig, reason: String, run_id: String, wall_time_s: f64, version: &str) -> Self {
        Self {
            config_hash: config.config_hash(),
            overrides: config.overrides(),
            config,
            run_id,
            status: RowStatus::Failed,
            reason: Some(reason),
            report: None,
            wall_time_s,
            artifact_version: version.to_string(),
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.metrics.accuracy.mean)
    }
}

/// Config hashes of rows that finished successfully.
pub fn completed_hashes(rows: &[ResultRow]) -> BTreeSet<String> {
    rows.iter()
        .filter(|r| r.status == RowStatus::Ok)
        .map(|r| r.config_hash.clone())
        .collect()
}

pub enum CellModel<T> {
    Prototypical(Encoder<T>),
    Baseline(Classifier<T>),
}

impl<T> CellModel<T> {
    pub fn encoder(&self) -> &Encoder<T> {
        match self {
            CellModel::Prototypical(e) => e,
            CellModel::Baseline(c) => &c.encoder,
        }
    }
}

pub struct CellOutcome<T> {
    pub report: CellReport,
    pub model: CellModel<T>,
    pub loss_history: Vec<f64>,
}

/// The training selection of a cell.
pub fn cell_budget(config: &ExperimentConfig, manifest: &DatasetManifest) -> Result<BudgetedDataset> {
    apply_budget(manifest, config.budget_fraction, config.budget_seed())
}

/// The `eval_episodes` test episodes of a prototypical cell.
pub fn cell_test_episodes(config: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<Episode>> {
    let pool = test_pool(manifest, config.eval_seed());
    episode_stream(&pool, &config.eval_spec()?, config.eval_episodes as u64)?.collect()
}

fn check_cell<T: Real>(config: &ExperimentConfig, manifest: &DatasetManifest, encoder: &Encoder<T>) -> Result<()> {
    config.validate()?;
    if manifest.view != config.view {
        return Err(Error::InvalidArgument(format!(
            "manifest view {} does not match config view {}",
            manifest.view, config.view
        )));
    }
    if encoder.kind != config.backbone {
        return Err(Error::InvalidArgument(format!(
            "encoder is {}, config asks for {}",
            encoder.kind, config.backbone
        )));
    }
    Ok(())
}

/// Runs one cell with sequential evaluation.
pub fn run_cell<T: Real>(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    encoder: Encoder<T>,
) -> Result<CellOutcome<T>> {
    run_cell_with(config, manifest, encoder, |enc, eps, m| evaluate(enc, eps, m))
}

/// Runs one cell; prototypical test episodes are scored by `evaluator`,
/// which must behave like [`evaluate`] (it may parallelize).
pub fn run_cell_with<T, E>(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    encoder: Encoder<T>,
    evaluator: E,
) -> Result<CellOutcome<T>>
where
    T: Real,
    E: Fn(&Encoder<T>, &[Episode], &DatasetManifest) -> Result<Vec<EpisodeMetrics>>,
{
    let trained = train_cell(config, manifest, encoder)?;
    evaluate_cell_with(config, manifest, trained, evaluator)
}

/// A cell after training, before evaluation.
pub struct TrainedCell<T> {
    pub model: CellModel<T>,
    pub selection_hash: String,
    pub train_patches: usize,
    pub steps: usize,
    pub loss_history: Vec<f64>,
    pub baseline_epochs: Option<usize>,
}

/// Hyperparameters of the baseline for a training selection of `n` patches:
/// batch 32 and enough epochs to match the episodic step count.
pub fn baseline_config(config: &ExperimentConfig, n_classes: usize, n: usize) -> ClassifierConfig {
    ClassifierConfig {
        backbone: config.backbone,
        n_classes,
        learning_rate: config.learning_rate,
        epochs: epochs_for_steps(n, DEFAULT_BATCH_SIZE, config.train_iterations),
        batch_size: DEFAULT_BATCH_SIZE,
        seed: config.cell_seed(),
    }
}

/// Budget selection and training of one cell.
pub fn train_cell<T: Real>(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    encoder: Encoder<T>,
) -> Result<TrainedCell<T>> {
    check_cell(config, manifest, &encoder)?;
    let train = cell_budget(config, manifest)?;
    let selection_hash = format!("{:016x}", train.selection_hash);
    match config.mode {
        Mode::Prototypical => {
            let iterations = config.train_iterations;
            let state = TrainState::new(encoder, config.learning_rate, iterations)?;
            let stream = episode_stream(&train, &config.train_spec()?, iterations as u64)?;
            let state = train_episodic(state, stream, manifest, iterations)?;
            Ok(TrainedCell {
                steps: state.step,
                model: CellModel::Prototypical(state.encoder),
                selection_hash,
                train_patches: train.len(),
                loss_history: state.loss_history,
                baseline_epochs: None,
            })
        }
        Mode::Baseline => {
            let classifier = baseline_config(config, train.classes().count(), train.len());
            let trained = train_baseline(&classifier, encoder, &train, manifest)?;
            Ok(TrainedCell {
                steps: trained.steps,
                model: CellModel::Baseline(trained.classifier),
                selection_hash,
                train_patches: train.len(),
                loss_history: trained.loss_history,
                baseline_epochs: Some(classifier.epochs),
            })
        }
    }
}

/// Scores a trained cell: test episodes for a prototypical model, every
/// test patch once for the baseline.
pub fn evaluate_cell_with<T, E>(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    trained: TrainedCell<T>,
    evaluator: E,
) -> Result<CellOutcome<T>>
where
    T: Real,
    E: Fn(&Encoder<T>, &[Episode], &DatasetManifest) -> Result<Vec<EpisodeMetrics>>,
{
    let metrics = match &trained.model {
        CellModel::Prototypical(encoder) => {
            let episodes = cell_test_episodes(config, manifest)?;
            let scored = evaluator(encoder, &episodes, manifest)?;
            if scored.len() != episodes.len() {
                return Err(Error::DimensionMismatch {
                    expected: episodes.len(),
                    got: scored.len(),
                });
            }
            RowMetrics::from_episodes(&scored)?
        }
        CellModel::Baseline(classifier) => {
            let test = test_pool(manifest, config.eval_seed());
            let eval = evaluate_baseline(classifier, &test, manifest, DEFAULT_BATCH_SIZE)?;
            check_coverage(&eval.covered, manifest)?;
            RowMetrics::single(&eval.metrics)
        }
    };
    let baseline = matches!(trained.model, CellModel::Baseline(_));
    Ok(CellOutcome {
        report: CellReport {
            metrics,
            selection_hash: trained.selection_hash,
            train_patches: trained.train_patches,
            train_steps: trained.steps,
            final_loss: trained.loss_history.last().copied(),
            baseline_epochs: trained.baseline_epochs,
            baseline_batch_size: baseline.then_some(DEFAULT_BATCH_SIZE),
        },
        model: trained.model,
        loss_history: trained.loss_history,
    })
}

/// Every test record exactly once.
pub fn check_coverage(covered: &[usize], manifest: &DatasetManifest) -> Result<()> {
    let mut seen = covered.to_vec();
    seen.sort_unstable();
    let expected: Vec<usize> = manifest.indices(Split::Test).collect();
    if seen != expected {
        return Err(Error::InvalidArgument(format!(
            "baseline evaluation covered {} records, test split has {}",
            covered.len(),
            expected.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One row per (view, backbone): mean ± std over that group's cells.
    BackboneSummary,
    /// One row per shot setting, one column per budget.
    Detailed,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "backbone_summary" | "summary" => Ok(Layout::BackboneSummary),
            "detailed" => Ok(Layout::Detailed),
            _ => Err(Error::InvalidArgument(format!("unknown layout `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Group statistics behind one summary-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryGroup {
    pub mode: Mode,
    pub view: View,
    pub backbone: EncoderKind,
    pub accuracy: MetricsSummary,
    pub precision: MetricsSummary,
    pub recall: MetricsSummary,
    pub f1: MetricsSummary,
}

/// Latest successful row per config hash; failed hashes without any
/// success are returned separately.
fn latest(rows: &[ResultRow]) -> (Vec<&ResultRow>, Vec<&ResultRow>) {
    let mut ok: BTreeMap<&str, &ResultRow> = BTreeMap::new();
    let mut failed: BTreeMap<&str, &ResultRow> = BTreeMap::new();
    for r in rows {
        match r.status {
            RowStatus::Ok if r.report.is_some() => {
                ok.insert(&r.config_hash, r);
            }
            _ => {
                failed.insert(&r.config_hash, r);
            }
        }
    }
    failed.retain(|h, _| !ok.contains_key(h));
    (ok.into_values().collect(), failed.into_values().collect())
}

/// Mean ± std of each metric over the cells of every (mode, view, backbone)
/// group, with values in percent.
pub fn summary_groups(rows: &[ResultRow]) -> Result<Vec<SummaryGroup>> {
    let (ok, _) = latest(rows);
    let mut groups: BTreeMap<(Mode, View, EncoderKind), Vec<&RowMetrics>> = BTreeMap::new();
    for r in ok {
        let key = (r.config.mode, r.config.view, r.config.backbone);
        groups.entry(key).or_default().push(&r.report.as_ref().expect("ok row").metrics);
    }
    groups
        .into_iter()
        .map(|((mode, view, backbone), ms)| {
            let agg = |f: fn(&RowMetrics) -> f64| aggregate(&ms.iter().map(|m| 100.0 * f(m)).collect::<Vec<_>>());
            Ok(SummaryGroup {
                mode,
                view,
                backbone,
                accuracy: agg(|m| m.accuracy.mean)?,
                precision: agg(|m| m.precision.mean)?,
                recall: agg(|m| m.recall.mean)?,
                f1: agg(|m| m.f1.mean)?,
            })
        })
        .collect()
}

fn mean_std(s: &MetricsSummary) -> String {
    match s.std {
        Some(std) => format!("{:.2}±{:.2}", s.mean, std),
        None => format!("{:.2}", s.mean),
    }
}

fn bold(s: String, on: bool) -> String {
    if on {
        format!("**{s}**")
    } else {
        s
    }
}

fn budget_label(f: f64) -> String {
    let pct = f * 100.0;
    if (pct - Float::round(pct)).abs() < 1e-9 {
        format!("{}%", Float::round(pct) as i64)
    } else {
        format!("{pct}%")
    }
}

fn markdown(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for (c, w) in cells.iter().zip(&widths) {
            let pad = w - c.chars().count();
            let _ = write!(s, " {c}{} |", " ".repeat(pad));
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    out.push('|');
    for w in &widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
    }
    out
}

/// Renders result rows as a markdown table. Percentages have two decimals;
/// the best cell of each comparison group is wrapped in `**`.
pub fn render_table(rows: &[ResultRow], layout: Layout) -> Result<RenderedTable> {
    if rows.is_empty() {
        return Err(Error::Empty("no result rows to render"));
    }
    let mut warnings = Vec::new();
    let (ok, failed) = latest(rows);
    for f in &failed {
        warnings.push(format!(
            "cell {} ({} {} {} {} {}) failed: {}",
            f.config_hash,
            f.config.mode,
            f.config.view,
            f.config.backbone,
            f.config.shots_label(),
            budget_label(f.config.budget_fraction),
            f.reason.as_deref().unwrap_or("unknown reason")
        ));
    }
    let text = match layout {
        Layout::BackboneSummary => render_summary(rows, &mut warnings)?,
        Layout::Detailed => render_detailed(&ok, &failed, &mut warnings),
    };
    Ok(RenderedTable { text, warnings })
}

fn render_summary(rows: &[ResultRow], warnings: &mut Vec<String>) -> Result<String> {
    let groups = summary_groups(rows)?;
    let header: Vec<String> = ["Method", "View", "Model", "Accuracy", "Precision", "Recall", "F1-Score"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut best: BTreeMap<(Mode, View), f64> = BTreeMap::new();
    for g in &groups {
        let b = best.entry((g.mode, g.view)).or_insert(f64::NEG_INFINITY);
        *b = b.max(g.accuracy.mean);
    }
    let mut body = Vec::new();
    for g in &groups {
        if g.accuracy.std.is_none() {
            warnings.push(format!(
                "{} {} {} has a single cell; no spread reported",
                g.mode, g.view, g.backbone
            ));
        }
        let is_best = best[&(g.mode, g.view)] == g.accuracy.mean;
        body.push(
            [
                g.mode.to_string(),
                g.view.to_string(),
                g.backbone.to_string(),
                mean_std(&g.accuracy),
                mean_std(&g.precision),
                mean_std(&g.recall),
                mean_std(&g.f1),
            ]
            .into_iter()
            .map(|c| bold(c, is_best))
            .collect(),
        );
    }
    Ok(markdown(&header, &body))
}

fn render_detailed(ok: &[&ResultRow], failed: &[&ResultRow], warnings: &mut Vec<String>) -> String {
    let all = || ok.iter().chain(failed);
    let mut budgets: Vec<f64> = Vec::new();
    for r in all() {
        if !budgets.iter().any(|b| b.to_bits() == r.config.budget_fraction.to_bits()) {
            budgets.push(r.config.budget_fraction);
        }
    }
    budgets.sort_by(|a, b| b.total_cmp(a));
    let groups: BTreeSet<(View, EncoderKind)> = all().map(|r| (r.config.view, r.config.backbone)).collect();
    let shots: BTreeSet<(usize, usize)> = all()
        .filter(|r| r.config.mode == Mode::Prototypical)
        .map(|r| (r.config.n_way, r.config.k_shot))
        .collect();
    let has_baseline = all().any(|r| r.config.mode == Mode::Baseline);

    let mut header: Vec<String> = ["Method", "View", "Backbone", "Ways-Shots"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(budgets.iter().map(|&b| budget_label(b)));

    let find = |view, backbone, mode, shot: Option<(usize, usize)>, budget: f64| {
        ok.iter().copied().find(|r| {
            let c = &r.config;
            c.view == view
                && c.backbone == backbone
                && c.mode == mode
                && c.budget_fraction.to_bits() == budget.to_bits()
                && shot.is_none_or(|(n, k)| c.n_way == n && c.k_shot == k)
        })
    };

    let mut body = Vec::new();
    for &(view, backbone) in &groups {
        let mut lines: Vec<(Mode, Option<(usize, usize)>)> =
            shots.iter().map(|&s| (Mode::Prototypical, Some(s))).collect();
        if has_baseline {
            lines.push((Mode::Baseline, None));
        }
        // best prototypical accuracy per budget column
        let best: Vec<Option<f64>> = budgets
            .iter()
            .map(|&b| {
                shots
                    .iter()
                    .filter_map(|&s| find(view, backbone, Mode::Prototypical, Some(s), b))
                    .filter_map(|r| r.accuracy())
                    .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
            })
            .collect();
        for (mode, shot) in lines {
            let label = match shot {
                Some((n, k)) => format!("{n}-{k}"),
                None => "--".to_string(),
            };
            let mut row = vec![mode.to_string(), view.to_string(), backbone.to_string(), label.clone()];
            for (j, &b) in budgets.iter().enumerate() {
                match find(view, backbone, mode, shot, b).and_then(|r| r.accuracy()) {
                    Some(a) => {
                        let pct = format!("{:.2}", 100.0 * a);
                        row.push(bold(pct, mode == Mode::Prototypical && best[j] == Some(a)));
                    }
                    None => {
                        warnings.push(format!(
                            "missing cell: {mode} {view} {backbone} {label} {}",
                            budget_label(b)
                        ));
                        row.push("--".to_string());
                    }
                }
            }
            body.push(row);
        }
    }
    markdown(&header, &body)
}
