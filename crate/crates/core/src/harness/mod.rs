//! Experiment configuration, Monte Carlo execution and result files.

pub mod config;
pub mod experiment;
pub mod output;
pub mod presets;

pub use config::{load_config, load_config_with, ConfigFile, ExperimentConfig, Overrides};
pub use experiment::{prepare_run, run_experiment, ExperimentResult, RunResult, VariantOutcome, VariantRun};
pub use output::{emit_outputs, prepare_output_dir, summarize, Summary};
