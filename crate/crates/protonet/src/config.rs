//! TOML run configuration. Every section is optional; missing keys take the
//! library defaults.
//!
//! ```toml
//! seed = 3
//! out_dir = "runs/sur"
//! tiny = false
//!
//! [experiment]
//! view = "SUR"
//! backbone = "resnet34"
//! k_shot = 10
//!
//! [grid]
//! views = ["SUR", "SEC"]
//! shots = [5, 10]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use protonet_core::experiment::{ExperimentConfig, GridSpec};
use protonet_core::nn::EncoderKind;

use crate::error::{io, Error, Result};

/// Iteration and episode caps applied by tiny runs.
pub const TINY_ITERATIONS: usize = 30;
pub const TINY_EPISODES: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub tiny: Option<bool>,
    pub experiment: Option<ExperimentConfig>,
    pub grid: Option<GridSpec>,
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    toml::from_str(&text).map_err(|source| Error::Config {
        path: path.to_path_buf(),
        source,
    })
}

/// CI-scale run: tiny backbone, capped iterations and episodes.
pub fn apply_tiny(config: &mut ExperimentConfig) {
    config.backbone = EncoderKind::TinyTestCnn;
    config.train_iterations = config.train_iterations.min(TINY_ITERATIONS);
    config.eval_episodes = config.eval_episodes.min(TINY_EPISODES);
}

pub fn apply_tiny_grid(grid: &mut GridSpec) {
    grid.backbones = vec![EncoderKind::TinyTestCnn];
    grid.train_iterations = grid.train_iterations.min(TINY_ITERATIONS);
    grid.eval_episodes = grid.eval_episodes.min(TINY_EPISODES);
}
