//! Bundled experiment configs.

use super::config::{ConfigFile, ExperimentConfig};
use crate::error::Result;

/// Ten nodes estimating vectors of dimension 3: a local task per node
/// (tasks 1 to 10), a global task 11 and common tasks 12 and 13 shared by
/// two groups of five nodes. Four variants, 100 runs.
pub const PAPER: &str = include_str!("../../../../presets/paper.json");

/// Two linked nodes with one scalar task each, truths 1 and 0, unit
/// variance regressors.
pub const SCALAR: &str = include_str!("../../../../presets/scalar.json");

pub fn paper() -> Result<ExperimentConfig> {
    ExperimentConfig::from_json_str(PAPER, None)
}

pub fn scalar() -> Result<ExperimentConfig> {
    ExperimentConfig::from_json_str(SCALAR, None)
}

pub fn paper_file() -> ConfigFile {
    ConfigFile::from_json_str(PAPER).expect("bundled preset parses")
}

pub fn scalar_file() -> ConfigFile {
    ConfigFile::from_json_str(SCALAR).expect("bundled preset parses")
}
