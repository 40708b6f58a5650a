//! Append-only result log (one JSON row per line) and CSV export.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use protonet_core::experiment::{ResultRow, RowStatus};

use crate::error::{io, json, Error, Result};

/// Crash-safe sink: every row is written and synced before `append` returns.
pub struct ResultsLog {
    path: PathBuf,
    file: File,
}

impl ResultsLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io(dir))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        let mut line = serde_json::to_string(row).map_err(json(&self.path))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io(&self.path))?;
        self.file.sync_data().map_err(io(&self.path))
    }
}

#[derive(Debug, Default)]
pub struct LoadedRows {
    pub rows: Vec<ResultRow>,
    /// `(line number, reason)` of lines that could not be parsed, such as a
    /// row cut short by a crash.
    pub skipped: Vec<(usize, String)>,
}

/// Reads every row of a log; a missing file is an empty log.
pub fn read_rows(path: &Path) -> Result<LoadedRows> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(LoadedRows::default()),
        Err(e) => return Err(io(path)(e)),
    };
    let mut out = LoadedRows::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(row) => out.rows.push(row),
            Err(e) => out.skipped.push((n + 1, e.to_string())),
        }
    }
    Ok(out)
}

/// One line per row with the config axes and mean metrics.
pub fn write_summary_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "config_hash", "run_id", "status", "mode", "view", "backbone", "n_way", "k_shot", "n_query", "budget",
        "seed", "accuracy", "accuracy_std", "precision", "recall", "f1", "episodes", "wall_time_s", "reason",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let c = &r.config;
        let m = r.report.as_ref().map(|rep| &rep.metrics);
        let status = match r.status {
            RowStatus::Ok => "ok",
            RowStatus::Failed => "failed",
        };
        w.write_record([
            r.config_hash.clone(),
            r.run_id.clone(),
            status.to_string(),
            c.mode.to_string(),
            c.view.to_string(),
            c.backbone.to_string(),
            c.n_way.to_string(),
            c.k_shot.to_string(),
            c.n_query.to_string(),
            c.budget_fraction.to_string(),
            c.seed.to_string(),
            opt(m.map(|m| m.accuracy.mean)),
            opt(m.and_then(|m| m.accuracy.std)),
            opt(m.map(|m| m.precision.mean)),
            opt(m.map(|m| m.recall.mean)),
            opt(m.map(|m| m.f1.mean)),
            m.map(|m| m.episodes.to_string()).unwrap_or_default(),
            r.wall_time_s.to_string(),
            r.reason.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io(path))
}
