//! Synthetic streaming data for the linear observation model
//! `d = U w + v`, with Gaussian white regressors and noise.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! (master seed, run, node, domain) and positioned by a counter (the time
//! index for observations). Samples are therefore reproducible one at a time
//! and do not depend on the order in which runs or nodes are evaluated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::network::{GroundTruth, NodeId, NodeSpec, TaskSpec};

/// Maximum number of rejection-sampling draws in [`calibrate_snr`].
pub const CALIBRATION_ATTEMPTS: usize = 10_000;

/// Independent random streams derived from the same seed triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Observation = 1,
    Calibration = 2,
    GroundTruth = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSeed {
    pub master_seed: u64,
    pub run_index: u64,
    pub node: NodeId,
}

impl StreamSeed {
    pub fn new(master_seed: u64, run_index: u64, node: NodeId) -> Self {
        StreamSeed {
            master_seed,
            run_index,
            node,
        }
    }

    /// Generator for one (domain, counter) cell.
    pub fn rng(&self, domain: Domain, counter: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.run_index.to_le_bytes());
        key[16..24].copy_from_slice(&(self.node.0 as u64).to_le_bytes());
        key[24..].copy_from_slice(&(domain as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(counter);
        rng
    }
}

/// One realization (d, U) at a node. `u` is row-major with `rows` rows and
/// `cols = M_k` columns; its column blocks follow the node's interest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSample {
    pub node: NodeId,
    pub rows: usize,
    pub cols: usize,
    pub d: Vec<f64>,
    pub u: Vec<f64>,
    /// The noise realization v, kept for checking `d = U w + v`.
    pub noise: Vec<f64>,
}

impl ObservationSample {
    pub fn zeros(node: NodeId, rows: usize, cols: usize) -> Self {
        ObservationSample {
            node,
            rows,
            cols,
            d: vec![0.0; rows],
            u: vec![0.0; rows * cols],
            noise: vec![0.0; rows],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.u[r * self.cols..(r + 1) * self.cols]
    }

    /// U w for a flat node vector w.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Draws a fresh sample for `node` at time `i`.
pub fn generate_observation(
    node: &NodeSpec,
    truth: &GroundTruth,
    stream: StreamSeed,
    i: u64,
) -> Result<ObservationSample> {
    let w = truth.node_vector(node)?;
    let mut sample = ObservationSample::zeros(node.id, node.obs_rows, w.len());
    fill_observation(&mut sample, node, &w, stream, i);
    Ok(sample)
}

/// Allocation-free form of [`generate_observation`]; `w` is the node's
/// stacked true vector and `sample` must already have matching shape.
pub fn fill_observation(
    sample: &mut ObservationSample,
    node: &NodeSpec,
    w: &[f64],
    stream: StreamSeed,
    i: u64,
) {
    debug_assert_eq!(sample.cols, w.len());
    debug_assert_eq!(sample.rows, node.obs_rows);
    let mut rng = stream.rng(Domain::Observation, i);
    let su = node.regressor_var.sqrt();
    let sv = node.noise_var.sqrt();
    let cols = sample.cols;
    for r in 0..sample.rows {
        let row = &mut sample.u[r * cols..(r + 1) * cols];
        let mut signal = 0.0;
        for (x, wi) in row.iter_mut().zip(w) {
            let z: f64 = rng.sample(StandardNormal);
            *x = su * z;
            signal += *x * wi;
        }
        let z: f64 = rng.sample(StandardNormal);
        let v = sv * z;
        sample.noise[r] = v;
        sample.d[r] = signal + v;
    }
}

/// Per-node SNR in dB: expected signal power over noise power,
/// `10 log10(sigma_u^2 |w|^2 / sigma_v^2)`.
pub fn snr_of(node: &NodeSpec, truth: &GroundTruth) -> Result<f64> {
    snr_with(node, truth, node.regressor_var)
}

fn snr_with(node: &NodeSpec, truth: &GroundTruth, regressor_var: f64) -> Result<f64> {
    if node.noise_var <= 0.0 {
        return Err(Error::UndefinedSnr(node.id));
    }
    let w = truth.node_vector(node)?;
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    Ok(10.0 * (regressor_var * norm2 / node.noise_var).log10())
}

/// Draws the regressor variance uniformly in (0, 1) until the node's SNR lands
/// in `[lo, hi]` dB.
pub fn calibrate_snr(
    node: &NodeSpec,
    truth: &GroundTruth,
    lo: f64,
    hi: f64,
    stream: StreamSeed,
) -> Result<f64> {
    // sup over (0, 1) is reached as the variance approaches 1
    let max_achievable = snr_with(node, truth, 1.0)?;
    let mut rng = stream.rng(Domain::Calibration, 0);
    for _ in 0..CALIBRATION_ATTEMPTS {
        let candidate: f64 = rng.random();
        if candidate <= 0.0 {
            continue;
        }
        let snr = snr_with(node, truth, candidate)?;
        if snr >= lo && snr <= hi {
            return Ok(candidate);
        }
    }
    Err(Error::Calibration {
        node: node.id,
        lo,
        hi,
        max_achievable,
        attempts: CALIBRATION_ATTEMPTS,
    })
}

/// Ground truth with i.i.d. uniform(0, 1) entries for every task.
pub fn draw_ground_truth(tasks: &[TaskSpec], master_seed: u64, run_index: u64) -> GroundTruth {
    let values = tasks
        .iter()
        .map(|spec| {
            let mut rng = StreamSeed::new(master_seed, run_index, NodeId(0))
                .rng(Domain::GroundTruth, spec.id.0 as u64);
            (0..spec.dim).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    GroundTruth::new(tasks, values).expect("dims match by construction")
}
