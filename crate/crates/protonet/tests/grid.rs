mod common;

use std::fs;
use std::io::Write;

use protonet::grid::{run_grid, GridOptions, ManifestStore};
use protonet::results::{read_rows, write_summary_csv, ResultsLog};
use protonet_core::dataset::View;
use protonet_core::experiment::{GridSpec, Mode, RowStatus};
use protonet_core::nn::EncoderKind;

fn grid() -> GridSpec {
    GridSpec {
        views: vec![View::Sur],
        backbones: vec![EncoderKind::TinyTestCnn],
        shots: vec![1, 2, 3, 4],
        budgets: vec![1.0, 0.75, 0.5, 0.25],
        modes: vec![Mode::Prototypical],
        n_query: 2,
        train_iterations: 2,
        eval_episodes: 2,
        seed: 11,
        ..GridSpec::default()
    }
}

fn store() -> ManifestStore {
    let mut s = ManifestStore::default();
    s.insert(common::manifest(40, 8, 21));
    s
}

#[test]
fn interrupted_grid_resumes_with_exactly_the_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let (g, store) = (grid(), store());

    let mut log = ResultsLog::open(&path).unwrap();
    let first = run_grid(&g, &store, &mut log, &GridOptions { max_cells: Some(7), ..Default::default() }).unwrap();
    assert_eq!((first.executed, first.remaining, first.failed), (7, 9, 0));
    assert_eq!(read_rows(&path).unwrap().rows.len(), 7);

    let mut log = ResultsLog::open(&path).unwrap();
    let second = run_grid(&g, &store, &mut log, &GridOptions { parallel_eval: true, ..Default::default() }).unwrap();
    assert_eq!((second.skipped, second.executed, second.remaining), (7, 9, 0));

    let rows = read_rows(&path).unwrap().rows;
    assert_eq!(rows.len(), 16);
    let hashes: std::collections::BTreeSet<_> = rows.iter().map(|r| r.config_hash.clone()).collect();
    assert_eq!(hashes.len(), 16);
    assert!(rows.iter().all(|r| r.status == RowStatus::Ok));

    let mut log = ResultsLog::open(&path).unwrap();
    let third = run_grid(&g, &store, &mut log, &GridOptions::default()).unwrap();
    assert_eq!((third.skipped, third.executed), (16, 0));
}

#[test]
fn failed_cells_are_recorded_and_the_grid_continues() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let g = GridSpec {
        shots: vec![1, 500],
        budgets: vec![1.0],
        ..grid()
    };
    let mut log = ResultsLog::open(&path).unwrap();
    let s = run_grid(&g, &store(), &mut log, &GridOptions::default()).unwrap();
    assert_eq!((s.executed, s.failed), (2, 1));
    let rows = read_rows(&path).unwrap().rows;
    let failed: Vec<_> = rows.iter().filter(|r| r.status == RowStatus::Failed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].config.k_shot, 500);
    assert!(failed[0].reason.as_deref().unwrap().contains("episode needs"));
    assert!(failed[0].report.is_none());
}

#[test]
fn missing_manifest_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = ResultsLog::open(&dir.path().join("r.jsonl")).unwrap();
    let g = GridSpec {
        views: vec![View::Sec],
        ..grid()
    };
    let err = run_grid(&g, &store(), &mut log, &GridOptions::default()).unwrap_err();
    assert!(err.is_validation());
    let empty = GridSpec { shots: vec![], ..grid() };
    assert!(run_grid(&empty, &store(), &mut log, &GridOptions::default()).unwrap_err().is_validation());
}

#[test]
fn result_rows_round_trip_and_survive_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let g = GridSpec {
        shots: vec![2],
        budgets: vec![0.5],
        modes: vec![Mode::Prototypical, Mode::Baseline],
        ..grid()
    };
    let mut log = ResultsLog::open(&path).unwrap();
    run_grid(&g, &store(), &mut log, &GridOptions::default()).unwrap();

    let text = fs::read_to_string(&path).unwrap();
    let rows = read_rows(&path).unwrap().rows;
    assert_eq!(rows.len(), 2);
    // re-serializing reproduces the file byte for byte, so every float survived
    let again: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    assert_eq!(again, text);
    let baseline = rows.iter().find(|r| r.config.mode == Mode::Baseline).unwrap();
    assert_eq!(baseline.report.as_ref().unwrap().baseline_batch_size, Some(32));

    // a crash mid-write leaves a partial line that is skipped on read
    let mut f = fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(&text.as_bytes()[..40]).unwrap();
    let loaded = read_rows(&path).unwrap();
    assert_eq!((loaded.rows.len(), loaded.skipped.len()), (2, 1));
    assert_eq!(loaded.rows, rows);

    let csv = dir.path().join("summary.csv");
    write_summary_csv(&csv, &rows).unwrap();
    let csv = fs::read_to_string(csv).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("config_hash,run_id,status,mode"));
}
