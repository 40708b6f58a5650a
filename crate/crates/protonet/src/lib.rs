//! Filesystem side of `protonet-core`: image ingestion, manifest and patch
//! payload formats, checkpoints, embedding dumps, result logs and the
//! resumable experiment grid.

pub mod checkpoint;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod manifest;
pub mod results;

pub use error::{Error, Result};

/// Stamped into every result row.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
