//! Steady-state bias prediction, step-size bound and learning metrics.

use nalgebra::{DMatrix, DVector, Schur};
use serde::Serialize;

use crate::data::ObservationSample;
use crate::error::{Error, Result};
use crate::network::{
    squared_distance, ClusterSet, CombinationWeights, GroundTruth, Network, NodeSpec, Pair,
    TaskId, TaskKind, WEIGHT_SUM_TOLERANCE,
};

pub use crate::network::StackedIndex;

/// MSD values below this are reported at [`DB_FLOOR`].
pub const MSD_FLOOR: f64 = 1e-12;
pub const DB_FLOOR: f64 = -120.0;

pub fn to_db(linear: f64) -> f64 {
    if linear < MSD_FLOOR {
        DB_FLOOR
    } else {
        10.0 * linear.log10()
    }
}

/// Stacks per-pair rows c_{k,T_k(t)} into the N x N matrix C.
pub fn build_weight_matrix(
    weights: &[CombinationWeights],
    index: &StackedIndex,
) -> Result<DMatrix<f64>> {
    let n = index.len();
    let mut c = DMatrix::zeros(n, n);
    let mut covered = vec![false; n];
    for w in weights {
        let row = index.position(&w.owner())?;
        covered[row] = true;
        for (pair, &value) in w.weights() {
            c[(row, index.position(pair)?)] = value;
        }
    }
    if let Some(missing) = covered.iter().position(|&c| !c) {
        return Err(Error::Index(index.pair(missing)));
    }
    for r in 0..n {
        let sum: f64 = c.row(r).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Constraint(format!(
                "row {} of C sums to {sum}",
                index.pair(r)
            )));
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBias {
    pub pair: Pair,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasPrediction {
    /// Per-pair limiting mean error, empty unless `converged`.
    pub pairs: Vec<PairBias>,
    pub spectral_radius: f64,
    pub converged: bool,
}

impl BiasPrediction {
    /// The stacked bias vector in index order.
    pub fn stacked(&self) -> Vec<f64> {
        self.pairs.iter().flat_map(|p| p.bias.iter().copied()).collect()
    }
}

/// Dense mean-error transition `A = (C kron I_M)(I - M D)` with
/// `D = diag{R_k}`, `R_k = L_k sigma_u^2 I` and `M = diag{mu_k I}`.
pub fn mean_transition(
    c: &DMatrix<f64>,
    network: &Network,
    index: &StackedIndex,
) -> Result<DMatrix<f64>> {
    let m = index.uniform_dim().ok_or_else(|| {
        Error::Model("bias analysis requires equal task dimensions".into())
    })?;
    let n = index.len();
    if c.nrows() != n || c.ncols() != n {
        return Err(Error::Model(format!(
            "C is {}x{}, expected {n}x{n}",
            c.nrows(),
            c.ncols()
        )));
    }
    // diagonal of I - M D, per stacked pair
    let mut contraction = Vec::with_capacity(n);
    for pair in index.pairs() {
        let node = network.node(pair.node)?;
        contraction.push(1.0 - node.step_size * node.obs_rows as f64 * node.regressor_var);
    }
    let mut a = DMatrix::zeros(n * m, n * m);
    for r in 0..n {
        for s in 0..n {
            let v = c[(r, s)] * contraction[s];
            if v != 0.0 {
                for e in 0..m {
                    a[(r * m + e, s * m + e)] = v;
                }
            }
        }
    }
    Ok(a)
}

/// The `N x N` factor `C diag{1 - mu_k L_k sigma_u,k^2}` of the mean
/// transition, which equals that factor kron `I_M`.
fn pair_transition(c: &DMatrix<f64>, network: &Network, index: &StackedIndex) -> Result<DMatrix<f64>> {
    let mut b = c.clone();
    for (s, pair) in index.pairs().iter().enumerate() {
        let node = network.node(pair.node)?;
        b.column_mut(s)
            .scale_mut(1.0 - node.step_size * node.obs_rows as f64 * node.regressor_var);
    }
    Ok(b)
}

const SCHUR_MAX_ITERATIONS: usize = 100_000;

/// Largest eigenvalue modulus. Fails instead of looping when the Schur
/// iteration stalls.
pub fn spectral_radius(b: &DMatrix<f64>) -> Result<f64> {
    let schur = Schur::try_new(b.clone(), f64::EPSILON, SCHUR_MAX_ITERATIONS)
        .or_else(|| Schur::try_new(b.transpose(), f64::EPSILON, SCHUR_MAX_ITERATIONS))
        .ok_or_else(|| Error::Model("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Limiting mean error `[I - A]^{-1} [I - C kron I_M] q^o` of a static
/// combination policy, together with the spectral radius of `A`.
pub fn theoretical_bias(
    c: &DMatrix<f64>,
    network: &Network,
    truth: &GroundTruth,
    index: &StackedIndex,
) -> Result<BiasPrediction> {
    let a = mean_transition(c, network, index)?;
    let m = index.uniform_dim().expect("checked by mean_transition");
    let n = index.len();
    let radius = spectral_radius(&pair_transition(c, network, index)?)?;
    let diverged = BiasPrediction {
        pairs: Vec::new(),
        spectral_radius: radius,
        converged: false,
    };
    if !(radius < 1.0) {
        return Ok(diverged);
    }
    let q = DVector::from_vec(index.stack_truth(truth)?);
    // (I - C kron I) q, blockwise
    let mut rhs = q.clone();
    for r in 0..n {
        for s in 0..n {
            let cv = c[(r, s)];
            if cv != 0.0 {
                for e in 0..m {
                    rhs[r * m + e] -= cv * q[s * m + e];
                }
            }
        }
    }
    let system = DMatrix::identity(n * m, n * m) - a;
    let Some(x) = system.lu().solve(&rhs) else {
        return Ok(diverged);
    };
    let pairs = index
        .pairs()
        .iter()
        .enumerate()
        .map(|(p, pair)| PairBias {
            pair: *pair,
            bias: x.as_slice()[p * m..(p + 1) * m].to_vec(),
        })
        .collect();
    Ok(BiasPrediction {
        pairs,
        spectral_radius: radius,
        converged: true,
    })
}

/// Mean-stability bound `2 / lambda_max` for isotropic regressor blocks,
/// where each block covariance is `L_k sigma_u^2 I`. Zero variance gives
/// `+inf`.
pub fn step_size_bound(node: &NodeSpec) -> f64 {
    let lambda = node.obs_rows as f64 * node.regressor_var;
    if lambda <= 0.0 {
        f64::INFINITY
    } else {
        2.0 / lambda
    }
}

/// Which (node, task) pairs an MSD value averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Network,
    Kind(TaskKind),
    Task(TaskId),
}

impl Grouping {
    pub fn label(&self) -> String {
        match self {
            Grouping::Network => "network".into(),
            Grouping::Kind(k) => k.as_str().into(),
            Grouping::Task(t) => format!("task:{t}"),
        }
    }

    pub fn positions(&self, network: &Network, index: &StackedIndex) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (p, pair) in index.pairs().iter().enumerate() {
            let keep = match self {
                Grouping::Network => true,
                Grouping::Kind(kind) => network.task_kind(pair.task)? == *kind,
                Grouping::Task(t) => pair.task == *t,
            };
            if keep {
                out.push(p);
            }
        }
        if out.is_empty() {
            return Err(Error::Model(format!("empty MSD group {}", self.label())));
        }
        Ok(out)
    }
}

/// Network, each non-empty task category, then every task.
pub fn standard_groupings(network: &Network) -> Result<Vec<Grouping>> {
    let mut out = vec![Grouping::Network];
    for kind in [TaskKind::Global, TaskKind::Common, TaskKind::Local] {
        let mut present = false;
        for t in network.tasks() {
            present |= network.task_kind(t.id)? == kind;
        }
        if present {
            out.push(Grouping::Kind(kind));
        }
    }
    out.extend(network.tasks().iter().map(|t| Grouping::Task(t.id)));
    Ok(out)
}

/// `|q_t - phi_{k,t}|^2` for every stacked pair.
pub fn pair_deviations(estimates: &[f64], truth_stacked: &[f64], index: &StackedIndex, out: &mut [f64]) {
    for (p, dev) in out.iter_mut().enumerate().take(index.len()) {
        let span = index.span(p);
        *dev = squared_distance(&estimates[span.clone()], &truth_stacked[span]);
    }
}

pub fn group_mean(deviations: &[f64], positions: &[usize]) -> f64 {
    positions.iter().map(|&p| deviations[p]).sum::<f64>() / positions.len() as f64
}

/// Learning curves, one row per grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdTrace {
    pub labels: Vec<String>,
    pub iterations: Vec<usize>,
    /// `linear[g][j]`: MSD of grouping g at `iterations[j]`.
    pub linear: Vec<Vec<f64>>,
}

impl MsdTrace {
    pub fn new(labels: Vec<String>) -> Self {
        let linear = vec![Vec::new(); labels.len()];
        MsdTrace {
            labels,
            iterations: Vec::new(),
            linear,
        }
    }

    pub fn push(&mut self, iteration: usize, values: &[f64]) {
        self.iterations.push(iteration);
        for (row, &v) in self.linear.iter_mut().zip(values) {
            row.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn db(&self, group: usize) -> Vec<f64> {
        self.linear[group].iter().map(|&x| to_db(x)).collect()
    }

    pub fn group(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// MSD trace from a recorded history of flat phi vectors.
pub fn msd(
    history: &[(usize, Vec<f64>)],
    truth: &GroundTruth,
    network: &Network,
    groupings: &[Grouping],
) -> Result<MsdTrace> {
    let index = network.stacked_index();
    let truth_stacked = index.stack_truth(truth)?;
    let groups: Vec<Vec<usize>> = groupings
        .iter()
        .map(|g| g.positions(network, &index))
        .collect::<Result<_>>()?;
    let mut trace = MsdTrace::new(groupings.iter().map(Grouping::label).collect());
    let mut dev = vec![0.0; index.len()];
    let mut row = vec![0.0; groups.len()];
    for (i, phi) in history {
        if phi.len() != index.total_dim() {
            return Err(Error::Model(format!(
                "history entry at iteration {i} has length {}, expected {}",
                phi.len(),
                index.total_dim()
            )));
        }
        pair_deviations(phi, &truth_stacked, &index, &mut dev);
        for (r, g) in row.iter_mut().zip(&groups) {
            *r = group_mean(&dev, g);
        }
        trace.push(*i, &row);
    }
    Ok(trace)
}

/// Cluster links compared with the oracle sets. A link is any candidate
/// (l, p) of an owner (k, t), the owner itself included; it is an oracle
/// link iff p = t.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounts {
    pub kept_same: u64,
    pub dropped_same: u64,
    pub kept_different: u64,
    pub dropped_different: u64,
}

impl LinkCounts {
    pub fn precision(&self) -> f64 {
        let kept = self.kept_same + self.kept_different;
        if kept == 0 {
            1.0
        } else {
            self.kept_same as f64 / kept as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let same = self.kept_same + self.dropped_same;
        if same == 0 {
            1.0
        } else {
            self.kept_same as f64 / same as f64
        }
    }

    /// Oracle links dropped, over all oracle links.
    pub fn false_alarm_rate(&self) -> f64 {
        1.0 - self.recall()
    }

    /// Different-task links kept, over all different-task links.
    pub fn misdetection_rate(&self) -> f64 {
        let diff = self.kept_different + self.dropped_different;
        if diff == 0 {
            0.0
        } else {
            self.kept_different as f64 / diff as f64
        }
    }

    /// Wrong decisions over all links.
    pub fn error_rate(&self) -> f64 {
        let total = self.kept_same + self.dropped_same + self.kept_different + self.dropped_different;
        if total == 0 {
            0.0
        } else {
            (self.dropped_same + self.kept_different) as f64 / total as f64
        }
    }

    pub fn add(&mut self, other: &LinkCounts) {
        self.kept_same += other.kept_same;
        self.dropped_same += other.dropped_same;
        self.kept_different += other.kept_different;
        self.dropped_different += other.dropped_different;
    }
}

pub fn cluster_accuracy(clusters: &[ClusterSet], network: &Network) -> Result<LinkCounts> {
    let mut counts = LinkCounts::default();
    for set in clusters {
        let owner = set.owner();
        for cand in network.candidate_pairs(owner.node)? {
            let same = cand.task == owner.task;
            match (same, set.contains(&cand)) {
                (true, true) => counts.kept_same += 1,
                (true, false) => counts.dropped_same += 1,
                (false, true) => counts.kept_different += 1,
                (false, false) => counts.dropped_different += 1,
            }
        }
    }
    Ok(counts)
}

/// Fast link counting on stacked positions: `candidates[p]` and
/// `members[p]` as exposed by a clustering simulation.
pub fn count_links(index: &StackedIndex, candidates: &[Vec<usize>], members: &[Vec<usize>]) -> LinkCounts {
    let mut counts = LinkCounts::default();
    for (p, (cands, mems)) in candidates.iter().zip(members).enumerate() {
        let task = index.pair(p).task;
        let same_total = cands.iter().filter(|&&c| index.pair(c).task == task).count() as u64;
        let kept_same = mems.iter().filter(|&&c| index.pair(c).task == task).count() as u64;
        let kept_diff = mems.len() as u64 - kept_same;
        counts.kept_same += kept_same;
        counts.dropped_same += same_total - kept_same;
        counts.kept_different += kept_diff;
        counts.dropped_different += cands.len() as u64 - same_total - kept_diff;
    }
    counts
}

/// Sample average over `window` of `sum_k |d_k - U_k w_k|^2`, with
/// `estimates[k]` the stacked vector w_k of node k.
pub fn empirical_cost(estimates: &[Vec<f64>], window: &[Vec<ObservationSample>]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Model("empty sample window".into()));
    }
    let mut total = 0.0;
    for samples in window {
        if samples.len() != estimates.len() {
            return Err(Error::Model(format!(
                "{} samples for {} nodes",
                samples.len(),
                estimates.len()
            )));
        }
        for (s, w) in samples.iter().zip(estimates) {
            if w.len() != s.cols {
                return Err(Error::Model(format!(
                    "estimate of length {} for regressor width {}",
                    w.len(),
                    s.cols
                )));
            }
            total += s
                .apply(w)
                .iter()
                .zip(&s.d)
                .map(|(f, d)| (d - f) * (d - f))
                .sum::<f64>();
        }
    }
    Ok(total / window.len() as f64)
}

/// Per-pair weights of a static strategy, for [`build_weight_matrix`].
pub fn static_weights(
    variant: &crate::estimators::Variant,
    network: &Network,
) -> Result<Vec<CombinationWeights>> {
    use crate::estimators::{blind_weights, Variant};
    let index = network.stacked_index();
    index
        .pairs()
        .iter()
        .map(|&pair: &Pair| match variant {
            Variant::NonCooperative => crate::network::uniform_weights(pair, [pair]),
            Variant::OracleDnspe => {
                let set = network.oracle_cluster_set(pair)?;
                crate::network::uniform_weights(pair, set.members().iter().copied())
            }
            Variant::BlindDnspe => blind_weights(pair, network),
            Variant::UdNspe(_) => Err(Error::Policy(
                "UD-NSPE weights are time-varying; no static matrix".into(),
            )),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Variant;
    use crate::network::{NodeId, TaskSpec, Topology};

    fn scalar_pair(mu: f64, su: f64) -> Network {
        let node = |k: usize| NodeSpec {
            id: NodeId(k),
            tasks: vec![TaskId(k)],
            obs_rows: 1,
            step_size: mu,
            noise_var: 1e-3,
            regressor_var: su,
        };
        let tasks = vec![TaskSpec { id: TaskId(0), dim: 1 }, TaskSpec { id: TaskId(1), dim: 1 }];
        Network::new(tasks, vec![node(0), node(1)], Topology::complete(2)).unwrap()
    }

    #[test]
    fn noncooperative_matrix_is_identity_and_unbiased() {
        let net = scalar_pair(0.05, 1.0);
        let idx = net.stacked_index();
        let c = build_weight_matrix(&static_weights(&Variant::NonCooperative, &net).unwrap(), &idx).unwrap();
        assert_eq!(c, DMatrix::identity(2, 2));
        let truth = GroundTruth::new(net.tasks(), vec![vec![1.0], vec![0.0]]).unwrap();
        let b = theoretical_bias(&c, &net, &truth, &idx).unwrap();
        assert!(b.converged);
        assert!(b.stacked().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn blind_two_node_matrix() {
        let net = scalar_pair(0.05, 1.0);
        let idx = net.stacked_index();
        let c = build_weight_matrix(&static_weights(&Variant::BlindDnspe, &net).unwrap(), &idx).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));
    }

    /// Independent 2x2 solve by Cramer's rule of
    /// `[I - (1 - mu) C] x = (I - C) q` with q = (1, 0).
    #[test]
    fn two_node_bias_matches_cramer() {
        for &mu in &[0.01, 0.05, 0.3] {
            let net = scalar_pair(mu, 1.0);
            let idx = net.stacked_index();
            let c = build_weight_matrix(&static_weights(&Variant::BlindDnspe, &net).unwrap(), &idx).unwrap();
            let truth = GroundTruth::new(net.tasks(), vec![vec![1.0], vec![0.0]]).unwrap();
            let pred = theoretical_bias(&c, &net, &truth, &idx).unwrap();
            let g = 1.0 - mu;
            let (a11, a12, a21, a22) = (1.0 - 0.5 * g, -0.5 * g, -0.5 * g, 1.0 - 0.5 * g);
            let (b1, b2) = (0.5, -0.5);
            let det = a11 * a22 - a12 * a21;
            let x1 = (b1 * a22 - a12 * b2) / det;
            let x2 = (a11 * b2 - a21 * b1) / det;
            let got = pred.stacked();
            assert!((got[0] - x1).abs() < 1e-12 && (got[1] - x2).abs() < 1e-12);
            assert!((got[0] - 0.5).abs() < 1e-12 && (got[1] + 0.5).abs() < 1e-12);
            assert!((pred.spectral_radius - g).abs() < 1e-12);
        }
    }

    #[test]
    fn large_step_is_flagged_not_converged() {
        let net = scalar_pair(2.5, 1.0);
        let idx = net.stacked_index();
        let c = DMatrix::identity(2, 2);
        let truth = GroundTruth::new(net.tasks(), vec![vec![1.0], vec![0.0]]).unwrap();
        let b = theoretical_bias(&c, &net, &truth, &idx).unwrap();
        assert!(!b.converged);
        assert!(b.pairs.is_empty());
        assert!((b.spectral_radius - 1.5).abs() < 1e-12);
    }

    #[test]
    fn radius_of_the_pair_factor_matches_the_full_transition() {
        let net = scalar_pair(0.3, 0.7);
        let idx = net.stacked_index();
        let c = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]);
        let full = mean_transition(&c, &net, &idx).unwrap();
        let direct = full.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let reduced = spectral_radius(&pair_transition(&c, &net, &idx).unwrap()).unwrap();
        assert!((direct - reduced).abs() < 1e-12);
        // rotation by 90 degrees scaled by 0.8
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.8, 0.8, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn weight_matrix_errors() {
        let net = scalar_pair(0.05, 1.0);
        let idx = net.stacked_index();
        let mut w = static_weights(&Variant::NonCooperative, &net).unwrap();
        w.pop();
        assert!(matches!(build_weight_matrix(&w, &idx), Err(Error::Index(_))));
    }

    #[test]
    fn step_size_bounds() {
        let mut n = scalar_pair(0.1, 1.0).nodes()[0].clone();
        assert_eq!(step_size_bound(&n), 2.0);
        n.regressor_var = 0.5;
        assert_eq!(step_size_bound(&n), 4.0);
        n.regressor_var = 0.0;
        assert!(step_size_bound(&n).is_infinite());
    }

    #[test]
    fn msd_examples() {
        let net = scalar_pair(0.05, 1.0);
        let truth = GroundTruth::new(net.tasks(), vec![vec![1.0], vec![0.5]]).unwrap();
        let groups = [Grouping::Network, Grouping::Task(TaskId(1))];
        let trace = msd(&[(0, vec![1.0, 0.5]), (1, vec![0.0, 0.0])], &truth, &net, &groups).unwrap();
        assert_eq!(trace.linear[0], vec![0.0, (1.0 + 0.25) / 2.0]);
        assert_eq!(trace.linear[1], vec![0.0, 0.25]);
        assert_eq!(trace.db(0)[0], DB_FLOOR);
        assert!((trace.db(1)[1] - 10.0 * 0.25f64.log10()).abs() < 1e-12);
        assert!(Grouping::Kind(TaskKind::Global).positions(&net, &net.stacked_index()).is_err());
    }

    #[test]
    fn cluster_accuracy_cases() {
        let node = |k: usize| NodeSpec {
            id: NodeId(k),
            tasks: vec![TaskId(0), TaskId(k + 1)],
            obs_rows: 1,
            step_size: 0.01,
            noise_var: 1e-3,
            regressor_var: 1.0,
        };
        let tasks: Vec<_> = (0..4).map(|i| TaskSpec { id: TaskId(i), dim: 1 }).collect();
        let net = Network::new(tasks, (0..3).map(node).collect(), Topology::complete(3)).unwrap();
        let idx = net.stacked_index();
        let oracle: Vec<_> = idx.pairs().iter().map(|p| net.oracle_cluster_set(*p).unwrap()).collect();
        let acc = cluster_accuracy(&oracle, &net).unwrap();
        assert_eq!(acc.precision(), 1.0);
        assert_eq!(acc.recall(), 1.0);
        assert_eq!(acc.error_rate(), 0.0);

        let selfish: Vec<_> = idx.pairs().iter().map(|p| ClusterSet::singleton(*p)).collect();
        let acc = cluster_accuracy(&selfish, &net).unwrap();
        // oracle links: global pairs see 3 each (9), local pairs 1 each (3)
        assert_eq!(acc.kept_same + acc.dropped_same, 12);
        assert!((acc.recall() - 6.0 / 12.0).abs() < 1e-15);
        assert_eq!(acc.precision(), 1.0);
    }

    #[test]
    fn empirical_cost_cases() {
        let s = ObservationSample {
            node: NodeId(0),
            rows: 1,
            cols: 2,
            d: vec![1.0],
            u: vec![1.0, 2.0],
            noise: vec![0.0],
        };
        let window = vec![vec![s.clone()], vec![s]];
        assert_eq!(empirical_cost(&[vec![1.0, 0.0]], &window).unwrap(), 0.0);
        assert_eq!(empirical_cost(&[vec![0.0, 0.0]], &window).unwrap(), 1.0);
        assert!(empirical_cost(&[vec![0.0, 0.0]], &[]).is_err());
    }
}
