//! Adapt-then-combine diffusion updates for node-specific estimation.
//!
//! Four strategies share the same adaptation kernel and differ only in the
//! combination weights:
//!
//! * non-cooperative LMS: every pair keeps its own intermediate estimate;
//! * oracle D-NSPE: uniform weights over neighbors that share the task;
//! * blind D-NSPE: uniform weights over every neighboring (node, task) pair;
//! * UD-NSPE: uniform weights over a cluster set inferred each round from an
//!   auxiliary stand-alone LMS chain by thresholding squared distances.

use std::collections::BTreeMap;

use crate::data::ObservationSample;
use crate::error::{Error, Result};
use crate::network::{
    squared_distance, uniform_weights, ClusterSet, CombinationWeights, Network, NodeId, Pair,
    StackedIndex,
};

/// Outcome of the pairwise same-task test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// H0: both estimates track the same parameter vector.
    SameTask,
    /// H1: the estimates track different parameter vectors.
    DifferentTask,
}

/// H0 iff `|a - b|^2 < tau`. A distance exactly equal to `tau` is H1.
pub fn hypothesis_test(a: &[f64], b: &[f64], tau: f64) -> Result<Hypothesis> {
    if a.len() != b.len() {
        return Err(Error::Model(format!(
            "cannot compare estimates of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Policy(format!("threshold must be positive, got {tau}")));
    }
    Ok(if squared_distance(a, b) < tau {
        Hypothesis::SameTask
    } else {
        Hypothesis::DifferentTask
    })
}

/// Clustering thresholds tau_{kl,tp}: one default plus per-link overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    default: f64,
    overrides: BTreeMap<(Pair, Pair), f64>,
}

impl ThresholdPolicy {
    pub fn new(default: f64) -> Result<Self> {
        if !(default > 0.0) {
            return Err(Error::Policy(format!(
                "threshold must be positive, got {default}"
            )));
        }
        Ok(ThresholdPolicy {
            default,
            overrides: BTreeMap::new(),
        })
    }

    pub fn with_override(mut self, owner: Pair, candidate: Pair, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Policy(format!(
                "threshold for {owner} -> {candidate} must be positive, got {tau}"
            )));
        }
        self.overrides.insert((owner, candidate), tau);
        Ok(self)
    }

    pub fn default_threshold(&self) -> f64 {
        self.default
    }

    pub fn overrides(&self) -> &BTreeMap<(Pair, Pair), f64> {
        &self.overrides
    }

    pub fn get(&self, owner: Pair, candidate: Pair) -> f64 {
        self.overrides
            .get(&(owner, candidate))
            .copied()
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    NonCooperative,
    OracleDnspe,
    BlindDnspe,
    UdNspe(ThresholdPolicy),
}

impl Variant {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Variant::NonCooperative => "non-cooperative",
            Variant::OracleDnspe => "oracle-dnspe",
            Variant::BlindDnspe => "blind-dnspe",
            Variant::UdNspe(_) => "ud-nspe",
        }
    }
}

/// Step-size schedule mu_k(i).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// mu_k(i) = mu_k * i0 / (i0 + i)
    Decaying { i0: f64 },
}

impl StepSchedule {
    pub fn scale(&self, i: usize) -> f64 {
        match *self {
            StepSchedule::Constant => 1.0,
            StepSchedule::Decaying { i0 } => i0 / (i0 + i as f64),
        }
    }
}

/// In-place LMS correction `w += mu U^T (d - U w)`. The residual is formed
/// once from the incoming `w` and shared by every task block.
fn adapt_in_place(w: &mut [f64], sample: &ObservationSample, step: f64, residual: &mut [f64]) {
    let cols = sample.cols;
    for (r, res) in residual.iter_mut().enumerate().take(sample.rows) {
        let row = &sample.u[r * cols..(r + 1) * cols];
        let fitted: f64 = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        *res = sample.d[r] - fitted;
    }
    for (r, &res) in residual.iter().enumerate().take(sample.rows) {
        let row = &sample.u[r * cols..(r + 1) * cols];
        let g = step * res;
        for (wi, a) in w.iter_mut().zip(row) {
            *wi += g * a;
        }
    }
}

/// One adaptation step for a node. `estimates` holds one vector per task in
/// interest order; the result has the same layout.
pub fn adaptation_step(
    estimates: &[Vec<f64>],
    sample: &ObservationSample,
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let total: usize = estimates.iter().map(Vec::len).sum();
    if total != sample.cols || sample.d.len() != sample.rows || sample.u.len() != sample.rows * sample.cols {
        return Err(Error::Model(format!(
            "estimate length {} does not match regressor shape {}x{}",
            total, sample.rows, sample.cols
        )));
    }
    let mut flat: Vec<f64> = estimates.iter().flatten().copied().collect();
    let mut residual = vec![0.0; sample.rows];
    adapt_in_place(&mut flat, sample, step, &mut residual);
    let mut out = Vec::with_capacity(estimates.len());
    let mut offset = 0;
    for e in estimates {
        out.push(flat[offset..offset + e.len()].to_vec());
        offset += e.len();
    }
    Ok(out)
}

/// Convex combination of the exchanged intermediates selected by `weights`.
pub fn combination_step(
    intermediates: &BTreeMap<Pair, Vec<f64>>,
    weights: &CombinationWeights,
) -> Result<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for (pair, &c) in weights.weights() {
        let v = intermediates.get(pair).ok_or(Error::Exchange(*pair))?;
        match out.as_mut() {
            None => out = Some(v.iter().map(|x| c * x).collect()),
            Some(acc) => {
                if acc.len() != v.len() {
                    return Err(Error::Model(format!(
                        "cannot combine {} (length {}) with vectors of length {}",
                        pair,
                        v.len(),
                        acc.len()
                    )));
                }
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += c * x;
                }
            }
        }
    }
    out.ok_or_else(|| Error::Policy(format!("empty weights for {}", weights.owner())))
}

/// Static blind-fusion weights: uniform over every (l, p) with l in N_k.
pub fn blind_weights(owner: Pair, network: &Network) -> Result<CombinationWeights> {
    if !network.node(owner.node)?.tasks.contains(&owner.task) {
        return Err(Error::NotInterested {
            node: owner.node,
            task: owner.task,
        });
    }
    uniform_weights(owner, network.candidate_pairs(owner.node)?)
}

/// Rebuilds N_{k,t} from the exchanged stand-alone estimates.
pub fn update_cluster_set(
    owner: Pair,
    own: &[f64],
    exchanged: &BTreeMap<Pair, Vec<f64>>,
    thresholds: &ThresholdPolicy,
    network: &Network,
) -> Result<ClusterSet> {
    let mut members = vec![owner];
    for cand in network.candidate_pairs(owner.node)? {
        if cand == owner {
            continue;
        }
        let other = exchanged.get(&cand).ok_or(Error::Exchange(cand))?;
        if hypothesis_test(own, other, thresholds.get(owner, cand))? == Hypothesis::SameTask {
            members.push(cand);
        }
    }
    ClusterSet::new(owner, members)
}

/// Summary of one synchronous round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundLog {
    pub iteration: usize,
    /// Vectors received over links during the round, summed over nodes.
    pub exchanged_vectors: usize,
}

#[derive(Debug, Clone)]
enum Plan {
    Identity,
    /// Per pair: (source position, weight), sorted by source position.
    Static(Vec<Vec<(usize, f64)>>),
    Clustering {
        candidates: Vec<Vec<usize>>,
        thresholds: Vec<Vec<f64>>,
        /// N_{k,t}(i), positions sorted ascending.
        members: Vec<Vec<usize>>,
        /// The sets used by the most recent combination step.
        applied: Vec<Vec<usize>>,
    },
}

/// Network-wide state of one strategy: phi (diffusion), psi (intermediate)
/// and, for UD-NSPE, the stand-alone chain varsigma and the cluster sets.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    network: &'a Network,
    variant: Variant,
    schedule: StepSchedule,
    index: StackedIndex,
    phi: Vec<f64>,
    psi: Vec<f64>,
    varsigma: Vec<f64>,
    residual: Vec<f64>,
    /// (offset, dim) of every stacked pair.
    blocks: Vec<(usize, usize)>,
    node_spans: Vec<std::ops::Range<usize>>,
    plan: Plan,
    exchanged_per_round: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(network: &'a Network, variant: Variant, schedule: StepSchedule) -> Result<Self> {
        let index = network.stacked_index();
        let n = index.len();
        let candidate_positions = |pos: usize| -> Result<Vec<usize>> {
            let owner = index.pair(pos);
            let mut out = Vec::new();
            for cand in network.candidate_pairs(owner.node)? {
                let c = index.position(&cand)?;
                if index.dim(c) != index.dim(pos) {
                    return Err(Error::Model(format!(
                        "{} (dim {}) and {} (dim {}) cannot be fused",
                        owner,
                        index.dim(pos),
                        cand,
                        index.dim(c)
                    )));
                }
                out.push(c);
            }
            Ok(out)
        };
        let plan = match &variant {
            Variant::NonCooperative => Plan::Identity,
            Variant::OracleDnspe => {
                let mut rows = Vec::with_capacity(n);
                for pos in 0..n {
                    let set = network.oracle_cluster_set(index.pair(pos))?;
                    rows.push(static_row(&index, &uniform_weights(set.owner(), set.members().iter().copied())?)?);
                }
                Plan::Static(rows)
            }
            Variant::BlindDnspe => {
                let mut rows = Vec::with_capacity(n);
                for pos in 0..n {
                    candidate_positions(pos)?;
                    rows.push(static_row(&index, &blind_weights(index.pair(pos), network)?)?);
                }
                Plan::Static(rows)
            }
            Variant::UdNspe(policy) => {
                let mut candidates = Vec::with_capacity(n);
                let mut thresholds = Vec::with_capacity(n);
                for pos in 0..n {
                    let c = candidate_positions(pos)?;
                    let owner = index.pair(pos);
                    thresholds.push(c.iter().map(|&q| policy.get(owner, index.pair(q))).collect());
                    candidates.push(c);
                }
                let singletons: Vec<Vec<usize>> = (0..n).map(|p| vec![p]).collect();
                Plan::Clustering {
                    candidates,
                    thresholds,
                    members: singletons.clone(),
                    applied: singletons,
                }
            }
        };
        let mut exchanged = 0;
        for k in 0..network.len() {
            for l in network.topology().neighborhood(NodeId(k)) {
                if l.0 != k {
                    exchanged += network.nodes()[l.0].tasks.len();
                }
            }
        }
        if matches!(variant, Variant::UdNspe(_)) {
            // both psi and varsigma travel
            exchanged *= 2;
        } else if matches!(variant, Variant::NonCooperative) {
            exchanged = 0;
        }
        let max_rows = network.nodes().iter().map(|n| n.obs_rows).max().unwrap_or(0);
        let dim = index.total_dim();
        let blocks = (0..index.len()).map(|p| (index.offset(p), index.dim(p))).collect();
        let node_spans = (0..network.len()).map(|k| index.node_span(NodeId(k))).collect();
        Ok(Simulation {
            network,
            variant,
            schedule,
            index,
            phi: vec![0.0; dim],
            psi: vec![0.0; dim],
            varsigma: vec![0.0; dim],
            residual: vec![0.0; max_rows],
            blocks,
            node_spans,
            plan,
            exchanged_per_round: exchanged,
        })
    }

    /// Overrides the zero initial guesses. Both vectors use the flat
    /// stacked layout.
    pub fn set_initial(&mut self, phi: &[f64], varsigma: &[f64]) -> Result<()> {
        let dim = self.index.total_dim();
        if phi.len() != dim || varsigma.len() != dim {
            return Err(Error::Model(format!(
                "initial estimates must have length {dim}"
            )));
        }
        self.phi.copy_from_slice(phi);
        self.varsigma.copy_from_slice(varsigma);
        Ok(())
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn index(&self) -> &StackedIndex {
        &self.index
    }

    /// Flat phi estimates in stacked layout.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Flat psi intermediates from the latest round.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Flat stand-alone estimates. Only advanced by UD-NSPE.
    pub fn varsigma(&self) -> &[f64] {
        &self.varsigma
    }

    pub fn phi_of(&self, pair: &Pair) -> Result<&[f64]> {
        let pos = self.index.position(pair)?;
        Ok(&self.phi[self.index.span(pos)])
    }

    pub fn varsigma_of(&self, pair: &Pair) -> Result<&[f64]> {
        let pos = self.index.position(pair)?;
        Ok(&self.varsigma[self.index.span(pos)])
    }

    /// Current N_{k,t}. `None` for strategies without clustering.
    pub fn cluster_set(&self, pair: &Pair) -> Result<Option<ClusterSet>> {
        let pos = self.index.position(pair)?;
        match &self.plan {
            Plan::Clustering { members, .. } => Ok(Some(self.to_cluster_set(pos, &members[pos])?)),
            _ => Ok(None),
        }
    }

    /// Current cluster members as stacked positions, one list per stacked
    /// pair. `None` without clustering.
    pub fn members(&self) -> Option<&[Vec<usize>]> {
        match &self.plan {
            Plan::Clustering { members, .. } => Some(members),
            _ => None,
        }
    }

    fn to_cluster_set(&self, pos: usize, members: &[usize]) -> Result<ClusterSet> {
        ClusterSet::new(
            self.index.pair(pos),
            members.iter().map(|&m| self.index.pair(m)),
        )
    }

    /// The weights applied by the most recent combination step (before any
    /// round: the weights the first round will use).
    pub fn applied_weights(&self, pair: &Pair) -> Result<CombinationWeights> {
        let pos = self.index.position(pair)?;
        let owner = self.index.pair(pos);
        match &self.plan {
            Plan::Identity => uniform_weights(owner, [owner]),
            Plan::Static(rows) => CombinationWeights::new(
                owner,
                rows[pos].iter().map(|&(s, w)| (self.index.pair(s), w)).collect(),
            ),
            Plan::Clustering { applied, .. } => {
                uniform_weights(owner, applied[pos].iter().map(|&m| self.index.pair(m)))
            }
        }
    }

    /// One synchronous round at time `i`: every node adapts, intermediates
    /// are exchanged, then every node combines. UD-NSPE additionally advances
    /// the stand-alone chain first and refreshes its cluster sets last.
    pub fn run_round(&mut self, samples: &[ObservationSample], i: usize) -> Result<RoundLog> {
        self.check_samples(samples)?;
        let scale = self.schedule.scale(i);
        let clustering = matches!(self.plan, Plan::Clustering { .. });

        for (k, sample) in samples.iter().enumerate() {
            let span = self.node_spans[k].clone();
            let step = self.network.nodes()[k].step_size * scale;
            if clustering {
                adapt_in_place(&mut self.varsigma[span.clone()], sample, step, &mut self.residual);
            }
            self.psi[span.clone()].copy_from_slice(&self.phi[span.clone()]);
            adapt_in_place(&mut self.psi[span], sample, step, &mut self.residual);
        }

        let blocks = &self.blocks;
        match &mut self.plan {
            Plan::Identity => self.phi.copy_from_slice(&self.psi),
            Plan::Static(rows) => {
                for (pos, row) in rows.iter().enumerate() {
                    combine_into(&mut self.phi, &self.psi, blocks, pos, row.iter().copied());
                }
            }
            Plan::Clustering {
                candidates,
                thresholds,
                members,
                applied,
            } => {
                for (pos, set) in members.iter().enumerate() {
                    let w = 1.0 / set.len() as f64;
                    combine_into(&mut self.phi, &self.psi, blocks, pos, set.iter().map(|&s| (s, w)));
                }
                std::mem::swap(applied, members);
                if !all_finite(&self.varsigma) {
                    return Err(Error::Divergence { iteration: i });
                }
                for (pos, set) in members.iter_mut().enumerate() {
                    let (off, dim) = blocks[pos];
                    set.clear();
                    for (&c, &tau) in candidates[pos].iter().zip(&thresholds[pos]) {
                        if block_distance(&self.varsigma, off, blocks[c].0, dim) < tau {
                            set.push(c);
                        }
                    }
                }
            }
        }

        if !all_finite(&self.phi) {
            return Err(Error::Divergence { iteration: i });
        }
        Ok(RoundLog {
            iteration: i,
            exchanged_vectors: self.exchanged_per_round,
        })
    }

    /// Candidate positions (l, p) for each stacked pair, or `None` without
    /// clustering.
    pub fn candidates(&self) -> Option<&[Vec<usize>]> {
        match &self.plan {
            Plan::Clustering { candidates, .. } => Some(candidates),
            _ => None,
        }
    }

    fn check_samples(&self, samples: &[ObservationSample]) -> Result<()> {
        if samples.len() != self.network.len() {
            return Err(Error::Model(format!(
                "expected {} samples, got {}",
                self.network.len(),
                samples.len()
            )));
        }
        for (k, s) in samples.iter().enumerate() {
            let node = &self.network.nodes()[k];
            let cols = self.index.node_span(NodeId(k)).len();
            if s.node.0 != k || s.rows != node.obs_rows || s.cols != cols || s.u.len() != s.rows * s.cols || s.d.len() != s.rows {
                return Err(Error::Model(format!(
                    "sample for node {} has shape {}x{}, expected {}x{}",
                    node.id, s.rows, s.cols, node.obs_rows, cols
                )));
            }
        }
        Ok(())
    }
}

fn static_row(index: &StackedIndex, weights: &CombinationWeights) -> Result<Vec<(usize, f64)>> {
    let mut row = Vec::with_capacity(weights.weights().len());
    for (pair, &w) in weights.weights() {
        row.push((index.position(pair)?, w));
    }
    row.sort_by_key(|&(p, _)| p);
    Ok(row)
}

/// phi[pos] = sum_s w_s psi[s], accumulated starting from the first term so
/// that a single unit weight copies its source bit for bit.
fn combine_into(
    phi: &mut [f64],
    psi: &[f64],
    blocks: &[(usize, usize)],
    pos: usize,
    terms: impl Iterator<Item = (usize, f64)>,
) {
    let (off, dim) = blocks[pos];
    let out = &mut phi[off..off + dim];
    // fixed widths let the compiler unroll the common small blocks
    match dim {
        1 => combine_fixed::<1>(out, psi, blocks, terms),
        2 => combine_fixed::<2>(out, psi, blocks, terms),
        3 => combine_fixed::<3>(out, psi, blocks, terms),
        4 => combine_fixed::<4>(out, psi, blocks, terms),
        _ => combine_any(out, psi, blocks, terms),
    }
}

/// `|v[a..a+dim] - v[b..b+dim]|^2`.
fn block_distance(v: &[f64], a: usize, b: usize, dim: usize) -> f64 {
    fn fixed<const N: usize>(v: &[f64], a: usize, b: usize) -> f64 {
        let x: &[f64; N] = v[a..][..N].try_into().expect("block width");
        let y: &[f64; N] = v[b..][..N].try_into().expect("block width");
        let mut sum = 0.0;
        for e in 0..N {
            sum += (x[e] - y[e]) * (x[e] - y[e]);
        }
        sum
    }
    match dim {
        1 => fixed::<1>(v, a, b),
        2 => fixed::<2>(v, a, b),
        3 => fixed::<3>(v, a, b),
        4 => fixed::<4>(v, a, b),
        _ => squared_distance(&v[a..a + dim], &v[b..b + dim]),
    }
}

fn combine_fixed<const N: usize>(
    out: &mut [f64],
    psi: &[f64],
    blocks: &[(usize, usize)],
    mut terms: impl Iterator<Item = (usize, f64)>,
) {
    let out: &mut [f64; N] = out.try_into().expect("block width");
    let Some((first, w0)) = terms.next() else {
        return;
    };
    let src: &[f64; N] = psi[blocks[first].0..][..N].try_into().expect("block width");
    let mut acc = src.map(|x| w0 * x);
    for (s, w) in terms {
        let src: &[f64; N] = psi[blocks[s].0..][..N].try_into().expect("block width");
        for e in 0..N {
            acc[e] += w * src[e];
        }
    }
    *out = acc;
}

fn combine_any(
    out: &mut [f64],
    psi: &[f64],
    blocks: &[(usize, usize)],
    mut terms: impl Iterator<Item = (usize, f64)>,
) {
    let dim = out.len();
    let Some((first, w0)) = terms.next() else {
        return;
    };
    for (o, x) in out.iter_mut().zip(&psi[blocks[first].0..blocks[first].0 + dim]) {
        *o = w0 * x;
    }
    for (s, w) in terms {
        for (o, x) in out.iter_mut().zip(&psi[blocks[s].0..blocks[s].0 + dim]) {
            *o += w * x;
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
