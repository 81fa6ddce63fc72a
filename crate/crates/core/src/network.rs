//! Task universe, per-node interests, topology and combination weights.
//!
//! Node and task ids are dense and 0-based. Their `Display` impls print the
//! 1-based labels used in config files and reports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex constraint for combination weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

/// A (node, task) pair: the unit that is estimated, exchanged and clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub node: NodeId,
    pub task: TaskId,
}

impl Pair {
    pub fn new(node: usize, task: usize) -> Self {
        Pair {
            node: NodeId(node),
            task: TaskId(task),
        }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(node {}, task {})", self.node, self.task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub dim: usize,
}

/// Global, common or local, derived from the size of the interest group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Global,
    Common,
    Local,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Global => "global",
            TaskKind::Common => "common",
            TaskKind::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Ordered interest set; column blocks of the regressor follow this order.
    pub tasks: Vec<TaskId>,
    pub obs_rows: usize,
    pub step_size: f64,
    pub noise_var: f64,
    pub regressor_var: f64,
}

/// True parameter vectors, indexed by task id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    values: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn new(tasks: &[TaskSpec], values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != tasks.len() {
            return Err(Error::Model(format!(
                "ground truth has {} vectors for {} tasks",
                values.len(),
                tasks.len()
            )));
        }
        for spec in tasks {
            let v = &values[spec.id.0];
            if v.len() != spec.dim {
                return Err(Error::Model(format!(
                    "ground truth for task {} has length {}, expected {}",
                    spec.id,
                    v.len(),
                    spec.dim
                )));
            }
        }
        Ok(GroundTruth { values })
    }

    pub fn get(&self, task: TaskId) -> Result<&[f64]> {
        self.values
            .get(task.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownTask(task))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// w_k: the node's task vectors stacked in interest order.
    pub fn node_vector(&self, node: &NodeSpec) -> Result<Vec<f64>> {
        let mut w = Vec::new();
        for &t in &node.tasks {
            w.extend_from_slice(self.get(t)?);
        }
        Ok(w)
    }

    /// Smallest squared distance between two distinct tasks of equal dimension.
    pub fn min_separation(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (a, qa) in self.values.iter().enumerate() {
            for qb in &self.values[a + 1..] {
                if qa.len() != qb.len() {
                    continue;
                }
                let d = squared_distance(qa, qb);
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
        best
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Undirected one-hop adjacency. Self-membership lives on the diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
}

impl Topology {
    /// Builds a symmetric topology from a list of proper-neighbor edges.
    /// Self-membership is added for every node.
    pub fn from_edges(size: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut adjacency = vec![vec![false; size]; size];
        for (k, row) in adjacency.iter_mut().enumerate() {
            row[k] = true;
        }
        for &(a, b) in edges {
            if a.0 >= size {
                return Err(Error::UnknownNode(a));
            }
            if b.0 >= size {
                return Err(Error::UnknownNode(b));
            }
            adjacency[a.0][b.0] = true;
            adjacency[b.0][a.0] = true;
        }
        Ok(Topology { adjacency })
    }

    /// Raw adjacency matrix, stored as given. May violate the invariants;
    /// run [`validate_topology`] on it.
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        if adjacency.iter().any(|row| row.len() != n) {
            return Err(Error::Config("adjacency matrix is not square".into()));
        }
        Ok(Topology { adjacency })
    }

    pub fn complete(size: usize) -> Self {
        Topology {
            adjacency: vec![vec![true; size]; size],
        }
    }

    /// Random geometric graph on the unit square, redrawn until connected.
    pub fn random_geometric(size: usize, radius: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let points: Vec<(f64, f64)> = (0..size)
                .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let mut edges = Vec::new();
            for a in 0..size {
                for b in a + 1..size {
                    let (dx, dy) = (points[a].0 - points[b].0, points[a].1 - points[b].1);
                    if dx * dx + dy * dy <= radius * radius {
                        edges.push((NodeId(a), NodeId(b)));
                    }
                }
            }
            let topology = Topology::from_edges(size, &edges).expect("ids in range");
            if topology.components().len() == 1 {
                return topology;
            }
        }
    }

    pub fn size(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_linked(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a.0][b.0]
    }

    /// N_k in ascending id order, including k.
    pub fn neighborhood(&self, k: NodeId) -> Vec<NodeId> {
        self.adjacency[k.0]
            .iter()
            .enumerate()
            .filter(|&(l, &linked)| linked || l == k.0)
            .map(|(l, _)| NodeId(l))
            .collect()
    }

    /// Proper-neighbor edges (a < b), treating any one-directional entry as a link.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.size();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if self.adjacency[a][b] || self.adjacency[b][a] {
                    out.push((NodeId(a), NodeId(b)));
                }
            }
        }
        out
    }

    /// Connected components by breadth-first search, following links in
    /// either direction.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let n = self.size();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut component = Vec::new();
            while let Some(a) = queue.pop_front() {
                component.push(NodeId(a));
                for b in 0..n {
                    if !seen[b] && (self.adjacency[a][b] || self.adjacency[b][a]) {
                        seen[b] = true;
                        queue.push_back(b);
                    }
                }
            }
            component.sort();
            out.push(component);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyReport {
    pub asymmetric_links: Vec<(NodeId, NodeId)>,
    pub missing_self: Vec<NodeId>,
    /// One entry per connected component; a single entry means connected.
    pub components: Vec<Vec<NodeId>>,
}

impl TopologyReport {
    pub fn symmetric(&self) -> bool {
        self.asymmetric_links.is_empty()
    }

    pub fn self_membership(&self) -> bool {
        self.missing_self.is_empty()
    }

    pub fn connected(&self) -> bool {
        self.components.len() <= 1
    }

    pub fn passed(&self) -> bool {
        self.symmetric() && self.self_membership() && self.connected()
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (a, b) in &self.asymmetric_links {
            out.push(format!("asymmetric link {a} -> {b}"));
        }
        for k in &self.missing_self {
            out.push(format!("node {k} missing from its own neighborhood"));
        }
        if !self.connected() {
            let parts: Vec<String> = self
                .components
                .iter()
                .map(|c| {
                    let ids: Vec<String> = c.iter().map(ToString::to_string).collect();
                    format!("{{{}}}", ids.join(","))
                })
                .collect();
            out.push(format!("disconnected: partition {}", parts.join(" ")));
        }
        out
    }
}

pub fn validate_topology(topology: &Topology, nodes: &[NodeSpec]) -> Result<TopologyReport> {
    let n = topology.size();
    if nodes.len() != n {
        return Err(Error::Config(format!(
            "{} nodes listed but topology has size {}",
            nodes.len(),
            n
        )));
    }
    let mut asymmetric_links = Vec::new();
    let mut missing_self = Vec::new();
    for a in 0..n {
        if !topology.adjacency[a][a] {
            missing_self.push(NodeId(a));
        }
        for b in 0..n {
            if topology.adjacency[a][b] && !topology.adjacency[b][a] {
                asymmetric_links.push((NodeId(a), NodeId(b)));
            }
        }
    }
    Ok(TopologyReport {
        asymmetric_links,
        missing_self,
        components: topology.components(),
    })
}

/// Members of a task-specific neighborhood N_{k,t}. Always contains the owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    owner: Pair,
    members: BTreeSet<Pair>,
}

impl ClusterSet {
    pub fn new(owner: Pair, members: impl IntoIterator<Item = Pair>) -> Result<Self> {
        let members: BTreeSet<Pair> = members.into_iter().collect();
        if !members.contains(&owner) {
            return Err(Error::Constraint(format!(
                "cluster set of {owner} does not contain its owner"
            )));
        }
        Ok(ClusterSet { owner, members })
    }

    pub fn singleton(owner: Pair) -> Self {
        ClusterSet {
            owner,
            members: BTreeSet::from([owner]),
        }
    }

    pub fn owner(&self) -> Pair {
        self.owner
    }

    pub fn members(&self) -> &BTreeSet<Pair> {
        &self.members
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.members.contains(pair)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Convex combination coefficients c_{kl,tp} for one owner pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationWeights {
    owner: Pair,
    weights: BTreeMap<Pair, f64>,
}

impl CombinationWeights {
    pub fn new(owner: Pair, weights: BTreeMap<Pair, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Policy(format!("empty weight support for {owner}")));
        }
        if let Some((p, w)) = weights.iter().find(|(_, w)| !(**w >= 0.0)) {
            return Err(Error::Constraint(format!(
                "negative weight {w} on {p} for owner {owner}"
            )));
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Constraint(format!(
                "weights of {owner} sum to {sum}, expected 1"
            )));
        }
        Ok(CombinationWeights { owner, weights })
    }

    pub fn owner(&self) -> Pair {
        self.owner
    }

    pub fn weights(&self) -> &BTreeMap<Pair, f64> {
        &self.weights
    }

    pub fn get(&self, pair: &Pair) -> f64 {
        self.weights.get(pair).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Checks the support against the owner's neighborhood pairs.
    pub fn check_support(&self, network: &Network) -> Result<()> {
        let k = self.owner.node;
        for p in self.weights.keys() {
            if !network.topology().is_linked(k, p.node) {
                return Err(Error::Constraint(format!(
                    "weight on {p} outside the neighborhood of node {k}"
                )));
            }
            if !network.node(p.node)?.tasks.contains(&p.task) {
                return Err(Error::NotInterested {
                    node: p.node,
                    task: p.task,
                });
            }
        }
        Ok(())
    }
}

/// Equal weight 1/|members| on every member.
pub fn uniform_weights(
    owner: Pair,
    members: impl IntoIterator<Item = Pair>,
) -> Result<CombinationWeights> {
    let members: BTreeSet<Pair> = members.into_iter().collect();
    if members.is_empty() {
        return Err(Error::Policy(format!("empty member set for {owner}")));
    }
    let w = 1.0 / members.len() as f64;
    CombinationWeights::new(owner, members.into_iter().map(|p| (p, w)).collect())
}

/// A validated network: tasks, node specs and a connected symmetric topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    tasks: Vec<TaskSpec>,
    nodes: Vec<NodeSpec>,
    topology: Topology,
}

impl Network {
    pub fn new(tasks: Vec<TaskSpec>, nodes: Vec<NodeSpec>, topology: Topology) -> Result<Self> {
        for (i, spec) in tasks.iter().enumerate() {
            if spec.id.0 != i {
                return Err(Error::Config(format!(
                    "task ids must be dense and ordered: position {} holds task {}",
                    i + 1,
                    spec.id
                )));
            }
            if spec.dim == 0 {
                return Err(Error::Config(format!("task {} has dimension 0", spec.id)));
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(Error::Config(format!(
                    "node ids must be dense and ordered: position {} holds node {}",
                    i + 1,
                    node.id
                )));
            }
            if node.tasks.is_empty() {
                return Err(Error::Config(format!("node {} has no tasks", node.id)));
            }
            let mut seen = BTreeSet::new();
            for &t in &node.tasks {
                if t.0 >= tasks.len() {
                    return Err(Error::UnknownTask(t));
                }
                if !seen.insert(t) {
                    return Err(Error::Config(format!(
                        "node {} lists task {} twice",
                        node.id, t
                    )));
                }
            }
            if node.obs_rows == 0 {
                return Err(Error::Config(format!("node {} has obs_rows = 0", node.id)));
            }
            if !(node.step_size > 0.0 && node.step_size.is_finite()) {
                return Err(Error::Config(format!(
                    "node {} step size must be positive and finite",
                    node.id
                )));
            }
            if !(node.noise_var >= 0.0 && node.noise_var.is_finite()) {
                return Err(Error::Config(format!(
                    "node {} noise variance must be non-negative",
                    node.id
                )));
            }
            if !(node.regressor_var >= 0.0 && node.regressor_var.is_finite()) {
                return Err(Error::Config(format!(
                    "node {} regressor variance must be non-negative",
                    node.id
                )));
            }
        }
        let report = validate_topology(&topology, &nodes)?;
        if !report.passed() {
            return Err(Error::Config(format!(
                "invalid topology: {}",
                report.failures().join("; ")
            )));
        }
        Ok(Network {
            tasks,
            nodes,
            topology,
        })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [NodeSpec] {
        &mut self.nodes
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, k: NodeId) -> Result<&NodeSpec> {
        self.nodes.get(k.0).ok_or(Error::UnknownNode(k))
    }

    pub fn task(&self, t: TaskId) -> Result<&TaskSpec> {
        self.tasks.get(t.0).ok_or(Error::UnknownTask(t))
    }

    /// M_k = sum of the dims of the node's tasks.
    pub fn node_dim(&self, k: NodeId) -> Result<usize> {
        let node = self.node(k)?;
        Ok(node.tasks.iter().map(|t| self.tasks[t.0].dim).sum())
    }

    /// C_t: the nodes interested in task t.
    pub fn interest_group(&self, task: TaskId) -> Result<BTreeSet<NodeId>> {
        self.task(task)?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| n.tasks.contains(&task))
            .map(|n| n.id)
            .collect())
    }

    pub fn task_kind(&self, task: TaskId) -> Result<TaskKind> {
        let size = self.interest_group(task)?.len();
        Ok(if size == self.nodes.len() {
            TaskKind::Global
        } else if size <= 1 {
            TaskKind::Local
        } else {
            TaskKind::Common
        })
    }

    fn require_interest(&self, owner: Pair) -> Result<()> {
        if self.node(owner.node)?.tasks.contains(&owner.task) {
            Ok(())
        } else {
            Err(Error::NotInterested {
                node: owner.node,
                task: owner.task,
            })
        }
    }

    /// Every (l, p) with l in N_k and p in T_l, in node-then-interest order.
    pub fn candidate_pairs(&self, k: NodeId) -> Result<Vec<Pair>> {
        self.node(k)?;
        let mut out = Vec::new();
        for l in self.topology.neighborhood(k) {
            for &p in &self.nodes[l.0].tasks {
                out.push(Pair { node: l, task: p });
            }
        }
        Ok(out)
    }

    /// {(l, t) : l in N_k and l in C_t}.
    pub fn oracle_cluster_set(&self, owner: Pair) -> Result<ClusterSet> {
        self.require_interest(owner)?;
        let members = self
            .topology
            .neighborhood(owner.node)
            .into_iter()
            .filter(|l| self.nodes[l.0].tasks.contains(&owner.task))
            .map(|l| Pair {
                node: l,
                task: owner.task,
            });
        ClusterSet::new(owner, members)
    }

    pub fn stacked_index(&self) -> StackedIndex {
        StackedIndex::new(self)
    }
}

/// Bijection between (node, task) pairs and stacking positions: nodes in id
/// order, tasks in interest order. Also records the offset of each pair in a
/// flat estimate vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackedIndex {
    pairs: Vec<Pair>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    node_pairs: Vec<std::ops::Range<usize>>,
    lookup: BTreeMap<Pair, usize>,
    total_dim: usize,
}

impl StackedIndex {
    pub fn new(network: &Network) -> Self {
        let mut pairs = Vec::new();
        let mut dims = Vec::new();
        let mut offsets = Vec::new();
        let mut node_pairs = Vec::new();
        let mut lookup = BTreeMap::new();
        let mut offset = 0;
        for node in network.nodes() {
            let start = pairs.len();
            for &t in &node.tasks {
                let pair = Pair { node: node.id, task: t };
                lookup.insert(pair, pairs.len());
                pairs.push(pair);
                let dim = network.tasks()[t.0].dim;
                dims.push(dim);
                offsets.push(offset);
                offset += dim;
            }
            node_pairs.push(start..pairs.len());
        }
        StackedIndex {
            pairs,
            dims,
            offsets,
            node_pairs,
            lookup,
            total_dim: offset,
        }
    }

    /// N = sum of n_k.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn pair(&self, position: usize) -> Pair {
        self.pairs[position]
    }

    pub fn position(&self, pair: &Pair) -> Result<usize> {
        self.lookup.get(pair).copied().ok_or(Error::Index(*pair))
    }

    pub fn dim(&self, position: usize) -> usize {
        self.dims[position]
    }

    pub fn offset(&self, position: usize) -> usize {
        self.offsets[position]
    }

    /// Range of the pair's block inside a flat estimate vector.
    pub fn span(&self, position: usize) -> std::ops::Range<usize> {
        self.offsets[position]..self.offsets[position] + self.dims[position]
    }

    /// Positions of node k's pairs.
    pub fn node_positions(&self, k: NodeId) -> std::ops::Range<usize> {
        self.node_pairs[k.0].clone()
    }

    /// Range of node k's w_k block inside a flat estimate vector.
    pub fn node_span(&self, k: NodeId) -> std::ops::Range<usize> {
        let r = &self.node_pairs[k.0];
        if r.is_empty() {
            return 0..0;
        }
        self.offsets[r.start]..self.offsets[r.end - 1] + self.dims[r.end - 1]
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// The common task dimension, if all stacked pairs share one.
    pub fn uniform_dim(&self) -> Option<usize> {
        let first = *self.dims.first()?;
        self.dims.iter().all(|&d| d == first).then_some(first)
    }

    /// q^o stacked as col{col{q_t}}.
    pub fn stack_truth(&self, truth: &GroundTruth) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.total_dim);
        for pair in &self.pairs {
            out.extend_from_slice(truth.get(pair.task)?);
        }
        Ok(out)
    }
}
