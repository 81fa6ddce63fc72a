//! Node-specific parameter estimation over diffusion networks.
//!
//! Each node observes `d = U w + v` where its parameter vector `w` stacks the
//! vectors of the tasks it cares about (global, common to a subset of nodes,
//! or local). The crate simulates four estimation strategies on synthetic
//! data, predicts the steady-state bias of static combination policies in
//! closed form, and runs seeded Monte Carlo experiments.

pub mod analysis;
pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod network;

pub use error::{Error, ErrorCategory, Result};
