//! Seeded Monte Carlo execution of every configured variant.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::analysis::{
    build_weight_matrix, count_links, group_mean, pair_deviations, standard_groupings,
    static_weights, theoretical_bias, BiasPrediction, Grouping, LinkCounts, MsdTrace,
};
use crate::data::{calibrate_snr, draw_ground_truth, fill_observation, ObservationSample, StreamSeed};
use crate::error::{Error, Result};
use crate::estimators::{Simulation, ThresholdPolicy, Variant};
use crate::network::{GroundTruth, Network, NodeId, Pair, StackedIndex};

use super::config::{ExperimentConfig, VariantKind, VariantSpec};

/// One cooperation link of a final cluster set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub owner: Pair,
    pub candidate: Pair,
    pub kept: bool,
}

/// Everything recorded for one variant in one run that finished cleanly.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    /// Decimated learning curves; `iterations` counts completed rounds.
    pub trace: MsdTrace,
    /// Mean linear MSD per grouping over the steady-state window.
    pub window_msd: Vec<f64>,
    /// Mean signed error `q - phi` per stacked component over the window.
    pub window_error: Vec<f64>,
    /// Clustering decisions summed over every round of the window.
    pub window_links: Option<LinkCounts>,
    /// Link error rate at each trace point.
    pub error_rate_trace: Option<Vec<f64>>,
    /// Candidate links of the last cluster sets, owner self links excluded.
    pub final_links: Option<Vec<Link>>,
    pub final_phi: Vec<f64>,
    /// Digest of every measurement this variant consumed.
    pub stream_digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariantOutcome {
    Finished(Box<VariantRun>),
    /// A non-finite estimate appeared at this 0-based round.
    Diverged { iteration: usize },
}

impl VariantOutcome {
    pub fn finished(&self) -> Option<&VariantRun> {
        match self {
            VariantOutcome::Finished(r) => Some(r),
            VariantOutcome::Diverged { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_index: usize,
    pub truth: GroundTruth,
    /// Regressor variance per node as simulated.
    pub regressor_vars: Vec<f64>,
    /// Default clustering threshold per variant (`None` for static ones).
    pub thresholds: Vec<Option<f64>>,
    pub outcomes: Vec<VariantOutcome>,
    /// Predicted limiting mean error of blind fusion for this run.
    pub blind_bias: Option<BiasPrediction>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub groups: Vec<String>,
    pub index: StackedIndex,
    pub runs: Vec<RunResult>,
    pub elapsed: Duration,
}

/// The network and truth of run `run_index`, with auto-SNR regressor
/// variances calibrated.
pub fn prepare_run(config: &ExperimentConfig, run_index: usize) -> Result<(Network, GroundTruth)> {
    let source_run = if config.freeze_truth { 0 } else { run_index as u64 };
    let truth = match &config.fixed_truth {
        Some(t) => t.clone(),
        None => draw_ground_truth(config.network.tasks(), config.master_seed, source_run),
    };
    let mut network = config.network.clone();
    if let Some((lo, hi)) = config.snr_db {
        for (node, &auto) in network.nodes_mut().iter_mut().zip(&config.auto_snr) {
            if auto {
                let stream = StreamSeed::new(config.master_seed, source_run, node.id);
                node.regressor_var = calibrate_snr(node, &truth, lo, hi, stream)?;
            }
        }
    }
    Ok((network, truth))
}

/// Default threshold and the estimator variant for `spec` in a run with
/// the given truth.
pub fn instantiate_variant(
    config: &ExperimentConfig,
    spec: &VariantSpec,
    truth: &GroundTruth,
) -> Result<(Variant, Option<f64>)> {
    Ok(match spec.kind {
        VariantKind::NonCooperative => (Variant::NonCooperative, None),
        VariantKind::OracleDnspe => (Variant::OracleDnspe, None),
        VariantKind::BlindDnspe => (Variant::BlindDnspe, None),
        VariantKind::UdNspe => {
            let rule = spec
                .threshold
                .ok_or_else(|| Error::Policy(format!("variant {} has no threshold", spec.label)))?;
            let tau = rule.resolve(truth)?;
            let mut policy = ThresholdPolicy::new(tau)?;
            for &(owner, cand, t) in &config.threshold_overrides {
                policy = policy.with_override(owner, cand, t)?;
            }
            (Variant::UdNspe(policy), Some(tau))
        }
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let groupings = standard_groupings(&config.network)?;
    let index = config.network.stacked_index();
    let results: Vec<Result<RunResult>> = (0..config.runs)
        .into_par_iter()
        .map(|r| run_single(config, &groupings, r))
        .collect();
    // first failure in run order, so errors are reproducible too
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        groups: groupings.iter().map(Grouping::label).collect(),
        index,
        runs,
        elapsed: start.elapsed(),
    })
}

struct Tracker<'a> {
    sim: Simulation<'a>,
    trace: MsdTrace,
    window_msd: Vec<f64>,
    window_error: Vec<f64>,
    window_links: Option<LinkCounts>,
    error_rate_trace: Option<Vec<f64>>,
    digest: u64,
    diverged: Option<usize>,
}

const DIGEST_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fold_digest(mut h: u64, samples: &[ObservationSample]) -> u64 {
    for s in samples {
        for x in &s.d {
            h = (h ^ x.to_bits()).wrapping_mul(DIGEST_PRIME);
        }
    }
    h
}

/// Simulates every variant of one run on a shared observation stream.
pub fn run_single(config: &ExperimentConfig, groupings: &[Grouping], run_index: usize) -> Result<RunResult> {
    let start = Instant::now();
    let (network, truth) = prepare_run(config, run_index)?;
    let index = network.stacked_index();
    let truth_stacked = index.stack_truth(&truth)?;
    let groups: Vec<Vec<usize>> = groupings
        .iter()
        .map(|g| g.positions(&network, &index))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = groupings.iter().map(Grouping::label).collect();

    let mut thresholds = Vec::with_capacity(config.variants.len());
    let mut trackers = Vec::with_capacity(config.variants.len());
    for spec in &config.variants {
        let (variant, tau) = instantiate_variant(config, spec, &truth)?;
        thresholds.push(tau);
        let clustering = matches!(variant, Variant::UdNspe(_));
        trackers.push(Tracker {
            sim: Simulation::new(&network, variant, config.schedule)?,
            trace: MsdTrace::new(labels.clone()),
            window_msd: vec![0.0; groups.len()],
            window_error: vec![0.0; index.total_dim()],
            window_links: clustering.then(LinkCounts::default),
            error_rate_trace: clustering.then(Vec::new),
            digest: 0xcbf2_9ce4_8422_2325,
            diverged: None,
        });
    }

    let blind_bias = if config.variants.iter().any(|v| v.kind == VariantKind::BlindDnspe)
        && index.uniform_dim().is_some()
    {
        let c = build_weight_matrix(&static_weights(&Variant::BlindDnspe, &network)?, &index)?;
        Some(theoretical_bias(&c, &network, &truth, &index)?)
    } else {
        None
    };

    let node_truth: Vec<Vec<f64>> = network
        .nodes()
        .iter()
        .map(|n| truth.node_vector(n))
        .collect::<Result<_>>()?;
    let mut samples: Vec<ObservationSample> = network
        .nodes()
        .iter()
        .zip(&node_truth)
        .map(|(n, w)| ObservationSample::zeros(n.id, n.obs_rows, w.len()))
        .collect();
    let streams: Vec<StreamSeed> = (0..network.len())
        .map(|k| StreamSeed::new(config.master_seed, run_index as u64, NodeId(k)))
        .collect();

    let window_start = config.window_start();
    let mut dev = vec![0.0; index.len()];
    let mut row = vec![0.0; groups.len()];
    for i in 0..config.iterations {
        for ((sample, node), (w, stream)) in samples
            .iter_mut()
            .zip(network.nodes())
            .zip(node_truth.iter().zip(&streams))
        {
            fill_observation(sample, node, w, *stream, i as u64);
        }
        let done = i + 1;
        let record = done % config.record_every == 0 || done == config.iterations;
        let in_window = i >= window_start;
        for t in trackers.iter_mut().filter(|t| t.diverged.is_none()) {
            t.digest = fold_digest(t.digest, &samples);
            match t.sim.run_round(&samples, i) {
                Ok(_) => {}
                Err(Error::Divergence { iteration }) => {
                    t.diverged = Some(iteration);
                    continue;
                }
                Err(e) => return Err(e),
            }
            if !(record || in_window) {
                continue;
            }
            let phi = t.sim.phi();
            pair_deviations(phi, &truth_stacked, &index, &mut dev);
            for (r, g) in row.iter_mut().zip(&groups) {
                *r = group_mean(&dev, g);
            }
            let links = match (t.sim.candidates(), t.sim.members()) {
                (Some(c), Some(m)) => Some(count_links(&index, c, m)),
                _ => None,
            };
            if record {
                t.trace.push(done, &row);
                if let (Some(trace), Some(l)) = (&mut t.error_rate_trace, &links) {
                    trace.push(l.error_rate());
                }
            }
            if in_window {
                for (acc, v) in t.window_msd.iter_mut().zip(&row) {
                    *acc += v;
                }
                for ((acc, p), q) in t.window_error.iter_mut().zip(phi).zip(&truth_stacked) {
                    *acc += q - p;
                }
                if let (Some(acc), Some(l)) = (&mut t.window_links, &links) {
                    acc.add(l);
                }
            }
        }
    }

    let window_len = (config.iterations - window_start) as f64;
    let outcomes = trackers
        .into_iter()
        .map(|mut t| {
            if let Some(iteration) = t.diverged {
                return VariantOutcome::Diverged { iteration };
            }
            t.window_msd.iter_mut().for_each(|x| *x /= window_len);
            t.window_error.iter_mut().for_each(|x| *x /= window_len);
            let final_links = match (t.sim.candidates(), t.sim.members()) {
                (Some(c), Some(m)) => Some(final_links(&index, c, m)),
                _ => None,
            };
            VariantOutcome::Finished(Box::new(VariantRun {
                trace: t.trace,
                window_msd: t.window_msd,
                window_error: t.window_error,
                window_links: t.window_links,
                error_rate_trace: t.error_rate_trace,
                final_links,
                final_phi: t.sim.phi().to_vec(),
                stream_digest: t.digest,
            }))
        })
        .collect();

    Ok(RunResult {
        run_index,
        regressor_vars: network.nodes().iter().map(|n| n.regressor_var).collect(),
        truth,
        thresholds,
        outcomes,
        blind_bias,
        elapsed: start.elapsed(),
    })
}

fn final_links(index: &StackedIndex, candidates: &[Vec<usize>], members: &[Vec<usize>]) -> Vec<Link> {
    let mut out = Vec::new();
    for (p, (cands, mems)) in candidates.iter().zip(members).enumerate() {
        for &c in cands {
            if c == p {
                continue;
            }
            out.push(Link {
                owner: index.pair(p),
                candidate: index.pair(c),
                kept: mems.contains(&c),
            });
        }
    }
    out
}

impl ExperimentResult {
    /// Runs in which variant `v` finished.
    pub fn finished(&self, v: usize) -> impl Iterator<Item = &VariantRun> {
        self.runs.iter().filter_map(move |r| r.outcomes[v].finished())
    }

    pub fn divergence_count(&self, v: usize) -> usize {
        self.runs.len() - self.finished(v).count()
    }

    /// Mean trace over the runs in which variant `v` finished, or `None`
    /// if it diverged everywhere.
    pub fn mean_trace(&self, v: usize) -> Option<MsdTrace> {
        let mut it = self.finished(v);
        let first = it.next()?;
        let mut acc = first.trace.clone();
        let mut n = 1.0;
        for run in it {
            for (a, b) in acc.linear.iter_mut().zip(&run.trace.linear) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            n += 1.0;
        }
        for row in &mut acc.linear {
            row.iter_mut().for_each(|x| *x /= n);
        }
        Some(acc)
    }

    /// Mean over finished runs of the window MSD of grouping `g`, linear.
    pub fn steady_state_msd(&self, v: usize, g: usize) -> Option<f64> {
        mean(self.finished(v).map(|r| r.window_msd[g]))
    }

    /// Steady-state MSD of grouping `label` in dB.
    pub fn steady_state_db(&self, v: usize, label: &str) -> Option<f64> {
        let g = self.groups.iter().position(|l| l == label)?;
        self.steady_state_msd(v, g).map(crate::analysis::to_db)
    }

    pub fn variant_index(&self, label: &str) -> Option<usize> {
        self.config.variants.iter().position(|v| v.label == label)
    }

    /// Mean window error per stacked component over finished runs.
    pub fn empirical_bias(&self, v: usize) -> Option<Vec<f64>> {
        mean_vectors(self.finished(v).map(|r| r.window_error.as_slice()))
    }

    /// Standard error of [`ExperimentResult::empirical_bias`] per component.
    pub fn empirical_bias_stderr(&self, v: usize) -> Option<Vec<f64>> {
        let m = self.empirical_bias(v)?;
        let runs: Vec<&[f64]> = self.finished(v).map(|r| r.window_error.as_slice()).collect();
        let n = runs.len() as f64;
        if runs.len() < 2 {
            return Some(vec![f64::NAN; m.len()]);
        }
        Some(
            m.iter()
                .enumerate()
                .map(|(j, mj)| {
                    let var = runs.iter().map(|r| (r[j] - mj).powi(2)).sum::<f64>() / (n - 1.0);
                    (var / n).sqrt()
                })
                .collect(),
        )
    }

    /// Mean over runs of the predicted blind-fusion bias; `None` when any
    /// run's recursion is not mean-stable.
    pub fn theoretical_blind_bias(&self) -> Option<Vec<f64>> {
        let mut preds = Vec::new();
        for r in &self.runs {
            let b = r.blind_bias.as_ref()?;
            if !b.converged {
                return None;
            }
            preds.push(b.stacked());
        }
        mean_vectors(preds.iter().map(Vec::as_slice))
    }

    /// Per-run link metric samples for variant `v`.
    pub fn link_metric(&self, v: usize, metric: fn(&LinkCounts) -> f64) -> Vec<f64> {
        self.finished(v)
            .filter_map(|r| r.window_links.as_ref().map(metric))
            .collect()
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Sample standard error; `NaN` below two samples.
pub(crate) fn stderr(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

fn mean_vectors<'a>(mut rows: impl Iterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut acc = rows.next()?.to_vec();
    let mut n = 1.0;
    for r in rows {
        for (a, b) in acc.iter_mut().zip(r) {
            *a += b;
        }
        n += 1.0;
    }
    acc.iter_mut().for_each(|x| *x /= n);
    Some(acc)
}
