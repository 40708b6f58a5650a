mod common;

use protonet_core::dataset::View;
use protonet_core::episode::{apply_budget, episode_stream, EpisodeSpec};
use protonet_core::experiment::{
    completed_hashes, render_table, run_cell, summary_groups, CellReport, ExperimentConfig, GridSpec, Layout,
    MetricStat, Mode, ResultRow, RowMetrics,
};
use protonet_core::metrics::aggregate;
use protonet_core::nn::{Encoder, EncoderKind};
use protonet_core::proto::{evaluate, train_episodic, TrainState};
use protonet_core::synth::SynthSpec;

const SUR: [f64; 16] = [
    86.70, 86.77, 85.62, 84.85, 89.92, 87.98, 83.77, 88.77, 88.33, 82.75, 88.37, 88.08, 88.33, 85.67, 82.65, 87.88,
];

fn row(config: ExperimentConfig, accuracy: f64) -> ResultRow {
    let stat = MetricStat { mean: accuracy, std: Some(0.01) };
    let report = CellReport {
        metrics: RowMetrics {
            accuracy: stat,
            precision: stat,
            recall: stat,
            f1: stat,
            episodes: 100,
        },
        selection_hash: "0".into(),
        train_patches: 0,
        train_steps: 0,
        final_loss: None,
        baseline_epochs: None,
        baseline_batch_size: None,
    };
    ResultRow::ok(config, report, "run".into(), 0.0, "test")
}

fn sur_rows() -> Vec<ResultRow> {
    let grid = GridSpec {
        views: vec![View::Sur],
        backbones: vec![EncoderKind::Resnet34],
        ..GridSpec::default()
    };
    grid.cells().into_iter().zip(SUR).map(|(c, a)| row(c, a / 100.0)).collect()
}

#[test]
fn summary_layout_reports_mean_and_spread() {
    let rows = sur_rows();
    let table = render_table(&rows, Layout::BackboneSummary).unwrap();
    assert!(table.text.contains("86.65±2.22"), "{}", table.text);
    assert!(table.warnings.is_empty());

    let g = &summary_groups(&rows).unwrap()[0];
    let direct = aggregate(&SUR).unwrap();
    assert!((g.accuracy.mean - direct.mean).abs() < 1e-9);
    assert!((g.accuracy.std.unwrap() - direct.std.unwrap()).abs() < 1e-9);
}

#[test]
fn detailed_layout_bolds_column_best() {
    let table = render_table(&sur_rows(), Layout::Detailed).unwrap();
    let text = &table.text;
    assert!(text.contains("**88.77**"), "{text}");
    for other in ["84.85", "88.08", "87.88"] {
        assert!(text.contains(other) && !text.contains(&format!("**{other}**")));
    }
    let header = text.lines().next().unwrap();
    let pos: Vec<usize> = ["100%", "75%", "50%", "25%"].iter().map(|b| header.find(b).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn missing_and_failed_cells_become_placeholders() {
    let mut rows = sur_rows();
    let dropped = rows.remove(3);
    rows.push(ResultRow::failed(dropped.config, "diverged".into(), "run".into(), 0.0, "test"));
    let table = render_table(&rows, Layout::Detailed).unwrap();
    assert!(table.text.contains("--"));
    assert!(table.warnings.iter().any(|w| w.contains("diverged")));
    assert_eq!(completed_hashes(&rows).len(), 15);
}

#[test]
fn grid_resume_skips_completed_cells() {
    let grid = GridSpec {
        views: vec![View::Sur],
        backbones: vec![EncoderKind::Resnet34],
        ..GridSpec::default()
    };
    let rows: Vec<ResultRow> = grid.cells().into_iter().take(7).map(|c| row(c, 0.5)).collect();
    let pending = grid.pending(&completed_hashes(&rows));
    assert_eq!(pending.len(), 9);
    let done = completed_hashes(&rows);
    assert!(pending.iter().all(|c| !done.contains(&c.config_hash())));
}

fn tiny_config(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        backbone: EncoderKind::TinyTestCnn,
        n_way: 3,
        k_shot: 2,
        n_query: 2,
        budget_fraction: 0.5,
        train_iterations: 4,
        eval_episodes: 3,
        seed: 5,
        mode,
        ..ExperimentConfig::default()
    }
}

fn small_manifest() -> protonet_core::dataset::DatasetManifest {
    common::synthetic_manifest(&SynthSpec::new(3, 5, 24, 2.0, 17), 20, 12)
}

#[test]
fn cells_are_deterministic() {
    let manifest = small_manifest();
    for mode in [Mode::Prototypical, Mode::Baseline] {
        let config = tiny_config(mode);
        let a = run_cell::<f32>(&config, &manifest, Encoder::new(EncoderKind::TinyTestCnn, config.cell_seed())).unwrap();
        let b = run_cell::<f32>(&config, &manifest, Encoder::new(EncoderKind::TinyTestCnn, config.cell_seed())).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.loss_history, b.loss_history);
    }
}

#[test]
fn evaluation_leaves_the_encoder_untouched() {
    let manifest = small_manifest();
    let config = tiny_config(Mode::Prototypical);
    let outcome = run_cell::<f32>(&config, &manifest, Encoder::new(EncoderKind::TinyTestCnn, 1)).unwrap();
    let encoder = outcome.model.encoder();
    let snapshot = |e: &Encoder<f32>| {
        let mut v = Vec::new();
        e.visit(&mut |_, p| v.extend(p.value.iter().map(|x| x.to_bits())));
        v
    };
    let before = snapshot(encoder);
    let episodes = protonet_core::experiment::cell_test_episodes(&config, &manifest).unwrap();
    let first = evaluate(encoder, &episodes, &manifest).unwrap();
    let second = evaluate(encoder, &episodes, &manifest).unwrap();
    assert_eq!(before, snapshot(encoder));
    assert_eq!(first, second);
}

#[test]
fn one_training_step_moves_parameters() {
    let manifest = small_manifest();
    let data = apply_budget(&manifest, 1.0, 3).unwrap();
    let spec = EpisodeSpec::new(3, 2, 2, 3).unwrap();
    let encoder = Encoder::<f32>::new(EncoderKind::TinyTestCnn, 2);
    let mut before = Vec::new();
    encoder.visit(&mut |_, p| before.extend_from_slice(&p.value));
    let state = TrainState::new(encoder, 1e-4, 1).unwrap();
    let state = train_episodic(state, episode_stream(&data, &spec, 1).unwrap(), &manifest, 1).unwrap();
    let mut after = Vec::new();
    state.encoder.visit(&mut |_, p| after.extend_from_slice(&p.value));
    assert_eq!(state.step, 1);
    assert_eq!(state.loss_history.len(), 1);
    assert!(before.iter().zip(&after).any(|(a, b)| a != b));
    assert!(after.iter().all(|v| v.is_finite()));
}

#[test]
fn baseline_and_prototypical_share_the_training_subset() {
    let manifest = small_manifest();
    let proto = run_cell::<f32>(&tiny_config(Mode::Prototypical), &manifest, Encoder::new(EncoderKind::TinyTestCnn, 0)).unwrap();
    let base = run_cell::<f32>(&tiny_config(Mode::Baseline), &manifest, Encoder::new(EncoderKind::TinyTestCnn, 0)).unwrap();
    assert_eq!(proto.report.selection_hash, base.report.selection_hash);
    assert_eq!(proto.report.train_patches, base.report.train_patches);
    assert_eq!(base.report.metrics.episodes, 1);
    assert!(base.report.baseline_epochs.unwrap() >= 1);
}
