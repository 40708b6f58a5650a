use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use protonet::checkpoint::{load_model, save_model, CheckpointMeta};
use protonet::config::{apply_tiny, apply_tiny_grid, load_config, ConfigFile};
use protonet::embeddings::{project, write_psemb, write_psemb_text};
use protonet::grid::{build_encoder, parallel_evaluate, run_grid, GridOptions, ManifestStore};
use protonet::ingest::{ingest_images, write_images};
use protonet::manifest::{read_manifest, write_episode_dump, write_manifest, Payload};
use protonet::results::{read_rows, write_summary_csv, ResultsLog};
use protonet::{Error, ARTIFACT_VERSION};
use protonet_core::dataset::{build_view, extract_patches, DatasetManifest, ImageView, Split, View};
use protonet_core::experiment::{
    cell_budget, cell_test_episodes, evaluate_cell_with, render_table, train_cell, CellModel, ExperimentConfig,
    GridSpec, Layout, Mode, ResultRow, TrainedCell,
};
use protonet_core::nn::EncoderKind;
use protonet_core::seed;
use protonet_core::synth::{gen_synthetic_dataset, SynthSpec};

#[derive(Parser)]
#[command(name = "protonet", version, about = "Few-shot prototypical classification of kidney-stone patches")]
struct Cli {
    /// TOML file with `seed`, `out_dir`, `tiny`, `[experiment]` and `[grid]`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of all outputs [default: out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Tiny backbone and capped iterations, for smoke runs.
    #[arg(long, global = true)]
    tiny: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image corpus in the ingest layout.
    Synth(SynthArgs),
    /// Ingest images, extract patches, split and write a manifest.
    Prepare(PrepareArgs),
    /// Train one cell and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its test split and log a result row.
    Eval(EvalArgs),
    /// Run (or resume) the experiment grid.
    Grid(GridArgs),
    /// Render logged results as a table and export a CSV summary.
    Report(ReportArgs),
    /// Dump embeddings of a checkpoint for external projection.
    Project(ProjectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    images_per_class: usize,
    #[arg(long, default_value_t = 128)]
    image_size: usize,
    /// 0 gives indistinguishable classes.
    #[arg(long, default_value_t = 2.0)]
    separability: f64,
    /// Views to generate; repeat or comma-separate.
    #[arg(long = "view", value_delimiter = ',', default_values_t = vec![ImageView::Sur])]
    views: Vec<ImageView>,
    /// Image root [default: <out-dir>/images].
    #[arg(long)]
    root: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    /// Image root [default: <out-dir>/images].
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long, default_value_t = View::Sur)]
    view: View,
    /// Patches per class.
    #[arg(long, default_value_t = 100)]
    quota: usize,
    #[arg(long, default_value_t = protonet_core::dataset::PATCH_SIZE)]
    patch_size: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// `png` or `psc1`.
    #[arg(long, default_value = "png")]
    payload: Payload,
    /// Manifest directory [default: <out-dir>/manifests/<VIEW>].
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Overrides of the experiment configuration.
#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    view: Option<View>,
    #[arg(long)]
    backbone: Option<EncoderKind>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    n_query: Option<usize>,
    /// Fraction of the train split used, in (0, 1].
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// `prototypical` or `baseline`.
    #[arg(long)]
    mode: Option<Mode>,
    /// Manifest directory [default: <out-dir>/manifests/<VIEW>].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint path without extension [default: <out-dir>/checkpoints/<config hash>].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Directory of torchvision-named `<backbone>.bin` weights.
    #[arg(long)]
    pretrained_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Result log [default: <out-dir>/results.jsonl].
    #[arg(long)]
    results: Option<PathBuf>,
    /// Score episodes one at a time.
    #[arg(long)]
    sequential: bool,
    /// Also write the test episodes (patch ids per role) here.
    #[arg(long)]
    dump_episodes: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',')]
    views: Vec<View>,
    #[arg(long, value_delimiter = ',')]
    backbones: Vec<EncoderKind>,
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    modes: Vec<Mode>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Manifest root holding one `<VIEW>/` directory per view [default: <out-dir>/manifests].
    #[arg(long)]
    manifests: Option<PathBuf>,
    /// Result log [default: <out-dir>/results.jsonl].
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    pretrained_dir: Option<PathBuf>,
    /// Save every cell's model under <out-dir>/checkpoints.
    #[arg(long)]
    save_checkpoints: bool,
    /// Stop after this many new cells.
    #[arg(long)]
    max_cells: Option<usize>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Result log [default: <out-dir>/results.jsonl].
    #[arg(long)]
    results: Option<PathBuf>,
    /// `summary` or `detailed`.
    #[arg(long, default_value = "summary")]
    layout: Layout,
    /// CSV export [default: <out-dir>/summary.csv].
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    /// Checkpoint path without extension.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest directory [default: <out-dir>/manifests/<VIEW of the checkpoint>].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `train`, `test` or `all`.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output path without extension [default: <out-dir>/embeddings/<config hash>].
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<protonet_core::Error> for Failure {
    fn from(e: protonet_core::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    file: ConfigFile,
    seed: Option<u64>,
    out_dir: PathBuf,
    tiny: bool,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    fn manifest_dir(&self, view: View) -> PathBuf {
        self.out_dir.join("manifests").join(view.as_str())
    }
}

fn experiment(ctx: &Context, a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut c = ctx.file.experiment.unwrap_or_default();
    if let Some(s) = ctx.seed {
        c.seed = s;
    }
    c.view = a.view.unwrap_or(c.view);
    c.backbone = a.backbone.unwrap_or(c.backbone);
    c.n_way = a.n_way.unwrap_or(c.n_way);
    c.k_shot = a.k_shot.unwrap_or(c.k_shot);
    c.n_query = a.n_query.unwrap_or(c.n_query);
    c.budget_fraction = a.budget.unwrap_or(c.budget_fraction);
    c.train_iterations = a.iterations.unwrap_or(c.train_iterations);
    c.eval_episodes = a.eval_episodes.unwrap_or(c.eval_episodes);
    c.learning_rate = a.learning_rate.unwrap_or(c.learning_rate);
    c.mode = a.mode.unwrap_or(c.mode);
    if ctx.tiny {
        apply_tiny(&mut c);
    }
    c.validate()?;
    Ok(c)
}

fn load_manifest(ctx: &Context, explicit: Option<&Path>, view: View) -> Result<DatasetManifest, Failure> {
    let dir = explicit.map_or_else(|| ctx.manifest_dir(view), Path::to_path_buf);
    let m = read_manifest(&dir)?;
    if m.view != view {
        return Err(Failure::Validation(format!("{} holds a {} manifest, expected {view}", dir.display(), m.view)));
    }
    Ok(m)
}

fn checkpoint_stem(ctx: &Context, explicit: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    explicit.map_or_else(|| ctx.out_dir.join("checkpoints").join(config.config_hash()), Path::to_path_buf)
}

fn synth(ctx: &Context, a: &SynthArgs) -> Outcome {
    let root = a.root.clone().unwrap_or_else(|| ctx.out_dir.join("images"));
    for &view in &a.views {
        let s = seed::derive(&[ctx.seed(), seed::hash_str(view.as_str())]);
        let spec = SynthSpec::new(a.classes, a.images_per_class, a.image_size, a.separability, s).with_view(view);
        let images = gen_synthetic_dataset(&spec)?;
        let written = write_images(&root, &images)?;
        println!("{view}: wrote {} images under {}", written.len(), root.join(view.as_str()).display());
    }
    Ok(())
}

fn prepare_single(ctx: &Context, a: &PrepareArgs, root: &Path, view: ImageView) -> Result<DatasetManifest, Failure> {
    let ingested = ingest_images(root, view)?;
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    if ingested.images.is_empty() {
        return Err(Failure::Validation(format!("no {view} images under {}", root.display())));
    }
    let patches = extract_patches(&ingested.images, a.quota, a.patch_size, ctx.seed())?;
    Ok(DatasetManifest::assemble(View::from(view), patches, a.train_fraction, ctx.seed())?)
}

fn prepare(ctx: &Context, a: &PrepareArgs) -> Outcome {
    let root = a.root.clone().unwrap_or_else(|| ctx.out_dir.join("images"));
    let manifest = match a.view {
        View::Sur => prepare_single(ctx, a, &root, ImageView::Sur)?,
        View::Sec => prepare_single(ctx, a, &root, ImageView::Sec)?,
        View::Mix => build_view(
            &prepare_single(ctx, a, &root, ImageView::Sur)?,
            &prepare_single(ctx, a, &root, ImageView::Sec)?,
        )?,
    };
    let dir = a.output.clone().unwrap_or_else(|| ctx.manifest_dir(a.view));
    let path = write_manifest(&dir, &manifest, a.payload)?;
    let train = manifest.indices(Split::Train).count();
    println!(
        "{}: {} patches ({train} train, {} test), split {}",
        path.display(),
        manifest.len(),
        manifest.len() - train,
        manifest.split_id
    );
    Ok(())
}

fn meta_for(config: &ExperimentConfig, trained: &TrainedCell<f32>) -> CheckpointMeta {
    let encoder = trained.model.encoder();
    CheckpointMeta {
        backbone: encoder.kind,
        dim: encoder.dim,
        pretrained: encoder.pretrained,
        mode: config.mode,
        config_hash: config.config_hash(),
        step: trained.steps,
        final_loss: trained.loss_history.last().copied(),
        classes: match &trained.model {
            CellModel::Baseline(c) => Some(c.classes.clone()),
            CellModel::Prototypical(_) => None,
        },
        config: Some(*config),
        artifact_version: ARTIFACT_VERSION.into(),
    }
}

fn train(ctx: &Context, a: &TrainArgs) -> Outcome {
    let config = experiment(ctx, &a.experiment)?;
    let manifest = load_manifest(ctx, a.experiment.manifest.as_deref(), config.view)?;
    let encoder = build_encoder::<f32>(&config, a.pretrained_dir.as_deref())?;
    let trained = train_cell(&config, &manifest, encoder)?;
    let stem = checkpoint_stem(ctx, a.experiment.checkpoint.as_deref(), &config);
    let blob = save_model(&stem, &trained.model, &meta_for(&config, &trained))?;
    println!(
        "trained {} {} {} for {} steps on {} patches; final loss {}; checkpoint {}",
        config.mode,
        config.view,
        config.backbone,
        trained.steps,
        trained.train_patches,
        trained.loss_history.last().map_or("n/a".into(), |l| format!("{l:.4}")),
        blob.display()
    );
    Ok(())
}

fn eval(ctx: &Context, a: &EvalArgs) -> Outcome {
    let config = experiment(ctx, &a.experiment)?;
    let manifest = load_manifest(ctx, a.experiment.manifest.as_deref(), config.view)?;
    let stem = checkpoint_stem(ctx, a.experiment.checkpoint.as_deref(), &config);
    let started = std::time::Instant::now();
    let (model, meta) = load_model::<f32>(&stem)?;
    if meta.backbone != config.backbone || meta.mode != config.mode {
        return Err(Failure::Validation(format!(
            "checkpoint is {} {}, config asks for {} {}",
            meta.mode, meta.backbone, config.mode, config.backbone
        )));
    }
    if meta.config_hash != config.config_hash() {
        log::warn!("checkpoint was trained under config {}, evaluating as {}", meta.config_hash, config.config_hash());
    }
    if let Some(path) = &a.dump_episodes {
        write_episode_dump(path, &cell_test_episodes(&config, &manifest)?, &manifest)?;
    }
    let budget = cell_budget(&config, &manifest)?;
    let trained = TrainedCell {
        model,
        selection_hash: format!("{:016x}", budget.selection_hash),
        train_patches: budget.len(),
        steps: meta.step,
        loss_history: meta.final_loss.into_iter().collect(),
        baseline_epochs: None,
    };
    let outcome = if a.sequential {
        evaluate_cell_with(&config, &manifest, trained, protonet_core::proto::evaluate)?
    } else {
        evaluate_cell_with(&config, &manifest, trained, parallel_evaluate)?
    };
    let m = &outcome.report.metrics;
    let row = ResultRow::ok(
        config,
        outcome.report.clone(),
        format!("{}-eval", meta.config_hash),
        started.elapsed().as_secs_f64(),
        ARTIFACT_VERSION,
    );
    let results = a.results.clone().unwrap_or_else(|| ctx.out_dir.join("results.jsonl"));
    ResultsLog::open(&results)?.append(&row)?;
    println!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  ({} episodes)",
        m.accuracy.mean, m.precision.mean, m.recall.mean, m.f1.mean, m.episodes
    );
    Ok(())
}

fn grid(ctx: &Context, a: &GridArgs) -> Outcome {
    let mut g: GridSpec = ctx.file.grid.clone().unwrap_or_default();
    if let Some(s) = ctx.seed {
        g.seed = s;
    }
    macro_rules! axis {
        ($field:ident) => {
            if !a.$field.is_empty() {
                g.$field = a.$field.clone();
            }
        };
    }
    axis!(views);
    axis!(backbones);
    axis!(shots);
    axis!(budgets);
    axis!(modes);
    g.train_iterations = a.iterations.unwrap_or(g.train_iterations);
    g.eval_episodes = a.eval_episodes.unwrap_or(g.eval_episodes);
    if ctx.tiny {
        apply_tiny_grid(&mut g);
    }
    g.validate()?;
    let root = a.manifests.clone().unwrap_or_else(|| ctx.out_dir.join("manifests"));
    let store = ManifestStore::load(&root, &g.views)?;
    let results = a.results.clone().unwrap_or_else(|| ctx.out_dir.join("results.jsonl"));
    let mut log = ResultsLog::open(&results)?;
    let options = GridOptions {
        pretrained_dir: a.pretrained_dir.clone(),
        checkpoint_dir: a.save_checkpoints.then(|| ctx.out_dir.join("checkpoints")),
        parallel_eval: !a.sequential,
        max_cells: a.max_cells,
    };
    let s = run_grid(&g, &store, &mut log, &options)?;
    println!(
        "{} cells: {} already done, {} run ({} failed), {} left; results in {}",
        s.total,
        s.skipped,
        s.executed,
        s.failed,
        s.remaining,
        results.display()
    );
    if s.failed > 0 {
        return Err(Failure::Runtime(format!("{} cells failed; see the result log", s.failed)));
    }
    Ok(())
}

fn report(ctx: &Context, a: &ReportArgs) -> Outcome {
    let results = a.results.clone().unwrap_or_else(|| ctx.out_dir.join("results.jsonl"));
    let loaded = read_rows(&results)?;
    for (line, reason) in &loaded.skipped {
        log::warn!("{}:{line}: unreadable row skipped ({reason})", results.display());
    }
    if loaded.rows.is_empty() {
        return Err(Failure::Validation(format!("{} has no result rows", results.display())));
    }
    let table = render_table(&loaded.rows, a.layout)?;
    for w in &table.warnings {
        log::warn!("{w}");
    }
    println!("{}", table.text);
    let csv = a.csv.clone().unwrap_or_else(|| ctx.out_dir.join("summary.csv"));
    write_summary_csv(&csv, &loaded.rows)?;
    log::info!("wrote {}", csv.display());
    Ok(())
}

fn project_cmd(ctx: &Context, a: &ProjectArgs) -> Outcome {
    let split = match a.split.to_ascii_lowercase().as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        other => return Err(Failure::Validation(format!("unknown split `{other}`"))),
    };
    let (model, meta) = load_model::<f32>(&a.checkpoint)?;
    let view = meta
        .config
        .map(|c| c.view)
        .ok_or_else(|| Failure::Validation("checkpoint sidecar has no config; pass --manifest".into()));
    let manifest = match (&a.manifest, view) {
        (Some(dir), _) => read_manifest(dir)?,
        (None, Ok(v)) => load_manifest(ctx, None, v)?,
        (None, Err(e)) => return Err(e),
    };
    let dump = project(model.encoder(), &manifest, split, &meta.config_hash)?;
    let stem = a
        .output
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("embeddings").join(&meta.config_hash));
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    let bin = stem.with_extension("psemb");
    let txt = stem.with_extension("psemb.txt");
    write_psemb(&bin, &dump)?;
    write_psemb_text(&txt, &dump)?;
    println!("{} embeddings of width {} -> {}, {}", dump.rows(), dump.dim, bin.display(), txt.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Context {
        seed: cli.seed.or(file.seed),
        out_dir: cli.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| "out".into()),
        tiny: cli.tiny || file.tiny.unwrap_or(false),
        file,
    };
    match &cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Prepare(a) => prepare(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Grid(a) => grid(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Project(a) => project_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
