//! JSON experiment configuration: raw serde schema plus validation into a
//! ready-to-run [`ExperimentConfig`].
//!
//! Ids in files are 1-based and dense. The README documents the schema.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::StepSchedule;
use crate::network::{
    GroundTruth, Network, NodeId, NodeSpec, Pair, TaskId, TaskSpec, Topology,
};

fn cfg(field: impl AsRef<str>, msg: impl AsRef<str>) -> Error {
    Error::Config(format!("{}: {}", field.as_ref(), msg.as_ref()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegressorVarEntry {
    Value(f64),
    /// The literal string `"auto-snr"`.
    Auto(String),
}

fn default_rows() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: usize,
    pub tasks: Vec<usize>,
    #[serde(default = "default_rows")]
    pub obs_rows: usize,
    pub step_size: f64,
    pub noise_var: f64,
    pub regressor_var: RegressorVarEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    pub task: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub tasks: Vec<TaskEntry>,
    pub nodes: Vec<NodeEntry>,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    /// Fixed true parameters; drawn uniform(0, 1) per run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<TruthEntry>>,
}

impl NetworkFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| cfg("network", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkRef {
    Inline(NetworkFile),
    Path(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdEntry {
    /// Absolute threshold applied to every link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Threshold as a fraction of the smallest squared separation between
    /// distinct true task vectors, recomputed per run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantObject {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantEntry {
    Kind(String),
    Full(VariantObject),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideEntry {
    pub node_k: usize,
    pub task_t: usize,
    pub node_l: usize,
    pub task_p: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleEntry {
    #[default]
    Constant,
    Decaying { i0: f64 },
}

fn default_record_every() -> usize {
    1
}

fn default_fraction() -> f64 {
    0.1
}

/// The on-disk experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkRef,
    pub iterations: usize,
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub variants: Vec<VariantEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub threshold_overrides: Vec<OverrideEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<[f64; 2]>,
    #[serde(default)]
    pub step_schedule: ScheduleEntry,
    /// Reuse run 0's ground truth and regressor variances for every run.
    #[serde(default)]
    pub freeze_truth: bool,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_fraction")]
    pub steady_state_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ConfigFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Replaces a network path reference by the file it names.
    pub fn inline_network(&mut self, base_dir: Option<&Path>) -> Result<()> {
        if let NetworkRef::Path(p) = &self.network {
            let Some(base) = base_dir else {
                return Err(cfg("network", "path references are not allowed here"));
            };
            let path = base.join(p);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            self.network = NetworkRef::Inline(NetworkFile::from_json_str(&text)?);
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub master_seed: Option<u64>,
    pub runs: Option<usize>,
    pub iterations: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariantKind {
    NonCooperative,
    OracleDnspe,
    BlindDnspe,
    UdNspe,
}

impl VariantKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "non-cooperative" => Some(VariantKind::NonCooperative),
            "oracle-dnspe" => Some(VariantKind::OracleDnspe),
            "blind-dnspe" => Some(VariantKind::BlindDnspe),
            "ud-nspe" => Some(VariantKind::UdNspe),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::NonCooperative => "non-cooperative",
            VariantKind::OracleDnspe => "oracle-dnspe",
            VariantKind::BlindDnspe => "blind-dnspe",
            VariantKind::UdNspe => "ud-nspe",
        }
    }
}

/// How a UD-NSPE run picks its default threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    Absolute(f64),
    SeparationFactor(f64),
}

impl ThresholdRule {
    pub fn resolve(&self, truth: &GroundTruth) -> Result<f64> {
        match *self {
            ThresholdRule::Absolute(tau) => Ok(tau),
            ThresholdRule::SeparationFactor(f) => {
                let sep = truth.min_separation().ok_or_else(|| {
                    Error::Policy("relative threshold needs two tasks of equal dimension".into())
                })?;
                if !(sep > 0.0) {
                    return Err(Error::Policy(
                        "two true task vectors coincide; relative threshold is zero".into(),
                    ));
                }
                Ok(f * sep)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub label: String,
    pub kind: VariantKind,
    /// Set for UD-NSPE only.
    pub threshold: Option<ThresholdRule>,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Network with placeholder regressor variances for auto-SNR nodes.
    pub network: Network,
    pub auto_snr: Vec<bool>,
    pub fixed_truth: Option<GroundTruth>,
    pub iterations: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub variants: Vec<VariantSpec>,
    pub threshold_overrides: Vec<(Pair, Pair, f64)>,
    pub snr_db: Option<(f64, f64)>,
    pub schedule: StepSchedule,
    pub freeze_truth: bool,
    pub record_every: usize,
    pub steady_state_fraction: f64,
    pub output_dir: Option<PathBuf>,
    /// The config as run, with the network inlined and overrides applied.
    pub echo: ConfigFile,
}

impl ExperimentConfig {
    /// Validates a parsed config. Path network references are resolved
    /// against `base_dir`, and rejected when it is `None`.
    pub fn resolve(mut file: ConfigFile, base_dir: Option<&Path>) -> Result<Self> {
        file.inline_network(base_dir)?;
        let NetworkRef::Inline(net_file) = &file.network else {
            unreachable!("inlined above");
        };
        let (network, auto_snr, fixed_truth) = build_network(net_file)?;

        if file.iterations == 0 {
            return Err(cfg("iterations", "must be at least 1"));
        }
        if file.runs == 0 {
            return Err(cfg("runs", "must be at least 1"));
        }
        if file.record_every == 0 {
            return Err(cfg("record_every", "must be at least 1"));
        }
        if !(file.steady_state_fraction > 0.0 && file.steady_state_fraction <= 1.0) {
            return Err(cfg("steady_state_fraction", "must lie in (0, 1]"));
        }
        if file.variants.is_empty() {
            return Err(cfg("variants", "at least one variant is required"));
        }

        let global_rule = match file.threshold {
            None => None,
            Some(t) => Some(threshold_rule("threshold", t.value, t.separation_factor)?),
        };

        let mut variants = Vec::new();
        let mut labels = BTreeSet::new();
        for (i, entry) in file.variants.iter().enumerate() {
            let field = format!("variants[{i}]");
            let (kind_name, label, tau, factor) = match entry {
                VariantEntry::Kind(k) => (k.as_str(), None, None, None),
                VariantEntry::Full(o) => (o.kind.as_str(), o.label.clone(), o.tau, o.separation_factor),
            };
            let kind = VariantKind::parse(kind_name).ok_or_else(|| {
                cfg(&field, format!(
                    "unknown variant '{kind_name}' (expected non-cooperative, oracle-dnspe, blind-dnspe or ud-nspe)"
                ))
            })?;
            let threshold = if kind == VariantKind::UdNspe {
                if tau.is_some() || factor.is_some() {
                    Some(threshold_rule(&field, tau, factor)?)
                } else if let Some(rule) = global_rule {
                    Some(rule)
                } else {
                    return Err(cfg(&field, "ud-nspe requires a threshold (set `threshold` or the variant's `tau`)"));
                }
            } else {
                if tau.is_some() || factor.is_some() {
                    return Err(cfg(&field, "thresholds only apply to ud-nspe"));
                }
                None
            };
            let label = label.unwrap_or_else(|| kind.name().to_string());
            if label.is_empty() || label.contains([',', '\n', '"']) {
                return Err(cfg(&field, "label must be non-empty and free of commas, quotes and newlines"));
            }
            if !labels.insert(label.clone()) {
                return Err(cfg(&field, format!("duplicate variant label '{label}'")));
            }
            variants.push(VariantSpec {
                label,
                kind,
                threshold,
            });
        }

        let mut threshold_overrides = Vec::new();
        for (i, o) in file.threshold_overrides.iter().enumerate() {
            let field = format!("threshold_overrides[{i}]");
            let owner = Pair {
                node: node_id(&network, o.node_k).map_err(|m| cfg(&field, m))?,
                task: task_id(&network, o.task_t).map_err(|m| cfg(&field, m))?,
            };
            let cand = Pair {
                node: node_id(&network, o.node_l).map_err(|m| cfg(&field, m))?,
                task: task_id(&network, o.task_p).map_err(|m| cfg(&field, m))?,
            };
            if !network.candidate_pairs(owner.node)?.contains(&cand)
                || !network.nodes()[owner.node.0].tasks.contains(&owner.task)
            {
                return Err(cfg(&field, "not a link between neighboring (node, task) pairs"));
            }
            if !(o.tau > 0.0 && o.tau.is_finite()) {
                return Err(cfg(&field, "tau must be positive and finite"));
            }
            threshold_overrides.push((owner, cand, o.tau));
        }

        let snr_db = match file.snr_db {
            None => None,
            Some([lo, hi]) => {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(cfg("snr_db", "expected [lo, hi] with lo <= hi"));
                }
                Some((lo, hi))
            }
        };
        check_snr_feasibility(&network, &auto_snr, fixed_truth.as_ref(), snr_db)?;

        let schedule = match file.step_schedule {
            ScheduleEntry::Constant => StepSchedule::Constant,
            ScheduleEntry::Decaying { i0 } => {
                if !(i0 > 0.0 && i0.is_finite()) {
                    return Err(cfg("step_schedule.i0", "must be positive"));
                }
                StepSchedule::Decaying { i0 }
            }
        };

        Ok(ExperimentConfig {
            network,
            auto_snr,
            fixed_truth,
            iterations: file.iterations,
            runs: file.runs,
            master_seed: file.master_seed,
            variants,
            threshold_overrides,
            snr_db,
            schedule,
            freeze_truth: file.freeze_truth,
            record_every: file.record_every,
            steady_state_fraction: file.steady_state_fraction,
            output_dir: file.output_dir.as_ref().map(PathBuf::from),
            echo: file,
        })
    }

    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        Self::resolve(ConfigFile::from_json_str(text)?, base_dir)
    }

    /// First iteration (0-based round index) of the trailing steady-state window.
    pub fn window_start(&self) -> usize {
        let len = ((self.steady_state_fraction * self.iterations as f64).round() as usize)
            .clamp(1, self.iterations);
        self.iterations - len
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_with(path, &Overrides::default())
}

pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut file = ConfigFile::read(path)?;
    if let Some(seed) = overrides.master_seed {
        file.master_seed = seed;
    }
    if let Some(runs) = overrides.runs {
        file.runs = runs;
    }
    if let Some(iters) = overrides.iterations {
        file.iterations = iters;
    }
    if let Some(out) = &overrides.output_dir {
        file.output_dir = Some(out.to_string_lossy().into_owned());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    ExperimentConfig::resolve(file, Some(base))
}

fn threshold_rule(field: &str, value: Option<f64>, factor: Option<f64>) -> Result<ThresholdRule> {
    match (value, factor) {
        (Some(_), Some(_)) => Err(cfg(field, "give either a value or a separation_factor, not both")),
        (Some(v), None) if v > 0.0 && v.is_finite() => Ok(ThresholdRule::Absolute(v)),
        (None, Some(f)) if f > 0.0 && f.is_finite() => Ok(ThresholdRule::SeparationFactor(f)),
        (None, None) => Err(cfg(field, "missing threshold value")),
        _ => Err(cfg(field, "threshold must be positive and finite")),
    }
}

fn node_id(network: &Network, label: usize) -> std::result::Result<NodeId, String> {
    if label >= 1 && label <= network.len() {
        Ok(NodeId(label - 1))
    } else {
        Err(format!("unknown node {label}"))
    }
}

fn task_id(network: &Network, label: usize) -> std::result::Result<TaskId, String> {
    if label >= 1 && label <= network.tasks().len() {
        Ok(TaskId(label - 1))
    } else {
        Err(format!("unknown task {label}"))
    }
}

/// Converts the 1-based file form into a validated network.
pub fn build_network(file: &NetworkFile) -> Result<(Network, Vec<bool>, Option<GroundTruth>)> {
    let t = file.tasks.len();
    let mut tasks: Vec<Option<TaskSpec>> = vec![None; t];
    for (i, e) in file.tasks.iter().enumerate() {
        let field = format!("network.tasks[{i}]");
        if e.id == 0 || e.id > t {
            return Err(cfg(field, format!("id {} outside 1..={t}", e.id)));
        }
        if e.dim == 0 {
            return Err(cfg(field, "dim must be at least 1"));
        }
        if tasks[e.id - 1].is_some() {
            return Err(cfg(field, format!("duplicate task id {}", e.id)));
        }
        tasks[e.id - 1] = Some(TaskSpec {
            id: TaskId(e.id - 1),
            dim: e.dim,
        });
    }
    let tasks: Vec<TaskSpec> = tasks.into_iter().map(|x| x.expect("dense")).collect();
    if tasks.is_empty() {
        return Err(cfg("network.tasks", "at least one task is required"));
    }

    let k = file.nodes.len();
    if k == 0 {
        return Err(cfg("network.nodes", "at least one node is required"));
    }
    let mut nodes: Vec<Option<(NodeSpec, bool)>> = vec![None; k];
    for (i, e) in file.nodes.iter().enumerate() {
        let field = format!("network.nodes[{i}]");
        if e.id == 0 || e.id > k {
            return Err(cfg(field, format!("id {} outside 1..={k}", e.id)));
        }
        if nodes[e.id - 1].is_some() {
            return Err(cfg(field, format!("duplicate node id {}", e.id)));
        }
        let mut interest = Vec::with_capacity(e.tasks.len());
        for &label in &e.tasks {
            if label == 0 || label > t {
                return Err(cfg(format!("{field}.tasks"), format!("unknown task {label}")));
            }
            interest.push(TaskId(label - 1));
        }
        if interest.is_empty() {
            return Err(cfg(format!("{field}.tasks"), "must not be empty"));
        }
        let unique: BTreeSet<_> = interest.iter().collect();
        if unique.len() != interest.len() {
            return Err(cfg(format!("{field}.tasks"), "duplicate task"));
        }
        if e.obs_rows == 0 {
            return Err(cfg(format!("{field}.obs_rows"), "must be at least 1"));
        }
        if !(e.step_size > 0.0 && e.step_size.is_finite()) {
            return Err(cfg(format!("{field}.step_size"), "must be positive and finite"));
        }
        if !(e.noise_var >= 0.0 && e.noise_var.is_finite()) {
            return Err(cfg(format!("{field}.noise_var"), "must be non-negative and finite"));
        }
        let (regressor_var, auto) = match &e.regressor_var {
            RegressorVarEntry::Value(v) if *v >= 0.0 && v.is_finite() => (*v, false),
            RegressorVarEntry::Value(_) => {
                return Err(cfg(format!("{field}.regressor_var"), "must be non-negative and finite"))
            }
            RegressorVarEntry::Auto(s) if s == "auto-snr" => {
                if e.noise_var <= 0.0 {
                    return Err(cfg(format!("{field}.regressor_var"), "auto-snr needs a positive noise_var"));
                }
                (0.0, true)
            }
            RegressorVarEntry::Auto(s) => {
                return Err(cfg(format!("{field}.regressor_var"), format!("expected a number or \"auto-snr\", got \"{s}\"")))
            }
        };
        nodes[e.id - 1] = Some((
            NodeSpec {
                id: NodeId(e.id - 1),
                tasks: interest,
                obs_rows: e.obs_rows,
                step_size: e.step_size,
                noise_var: e.noise_var,
                regressor_var,
            },
            auto,
        ));
    }
    let (nodes, auto): (Vec<NodeSpec>, Vec<bool>) =
        nodes.into_iter().map(|x| x.expect("dense")).unzip();

    let mut edges = Vec::with_capacity(file.edges.len());
    for (i, [a, b]) in file.edges.iter().enumerate() {
        let field = format!("network.edges[{i}]");
        if *a == 0 || *a > k || *b == 0 || *b > k {
            return Err(cfg(field, format!("unknown node in [{a}, {b}]")));
        }
        if a == b {
            return Err(cfg(field, "self-loops are implicit; list proper neighbors only"));
        }
        edges.push((NodeId(a - 1), NodeId(b - 1)));
    }
    let topology = Topology::from_edges(k, &edges)?;

    let truth = match &file.ground_truth {
        None => None,
        Some(entries) => {
            let mut values: Vec<Option<Vec<f64>>> = vec![None; t];
            for (i, e) in entries.iter().enumerate() {
                let field = format!("network.ground_truth[{i}]");
                if e.task == 0 || e.task > t {
                    return Err(cfg(field, format!("unknown task {}", e.task)));
                }
                if values[e.task - 1].is_some() {
                    return Err(cfg(field, "duplicate task"));
                }
                if e.values.len() != tasks[e.task - 1].dim || e.values.iter().any(|x| !x.is_finite()) {
                    return Err(cfg(field, "values must be finite with length equal to the task dim"));
                }
                values[e.task - 1] = Some(e.values.clone());
            }
            let mut dense = Vec::with_capacity(t);
            for (i, v) in values.into_iter().enumerate() {
                dense.push(v.ok_or_else(|| cfg("network.ground_truth", format!("missing task {}", i + 1)))?);
            }
            Some(GroundTruth::new(&tasks, dense)?)
        }
    };

    let network = Network::new(tasks, nodes, topology)?;
    Ok((network, auto, truth))
}

/// Rejects SNR targets that no draw in (0, 1) can reach. With random truth
/// the stacked vector has entries in [0, 1), so |w_k|^2 < M_k bounds the SNR.
fn check_snr_feasibility(
    network: &Network,
    auto: &[bool],
    truth: Option<&GroundTruth>,
    snr: Option<(f64, f64)>,
) -> Result<()> {
    let any_auto = auto.iter().any(|&a| a);
    let Some((lo, _)) = snr else {
        if any_auto {
            return Err(cfg("snr_db", "required when a node uses auto-snr"));
        }
        return Ok(());
    };
    for (node, &is_auto) in network.nodes().iter().zip(auto) {
        if !is_auto {
            continue;
        }
        let norm2 = match truth {
            Some(t) => t.node_vector(node)?.iter().map(|x| x * x).sum::<f64>(),
            None => network.node_dim(node.id)? as f64,
        };
        let max = 10.0 * (norm2 / node.noise_var).log10();
        if !(lo < max) {
            return Err(cfg(
                "snr_db",
                format!("infeasible for node {}: achievable range (-inf, {max:.3}) dB", node.id),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "network": {
            "tasks": [{"id": 1, "dim": 1}, {"id": 2, "dim": 1}],
            "nodes": [
                {"id": 1, "tasks": [1], "step_size": 0.05, "noise_var": 0.001, "regressor_var": 1.0},
                {"id": 2, "tasks": [2], "step_size": 0.05, "noise_var": 0.001, "regressor_var": "auto-snr"}
            ],
            "edges": [[1, 2]]
        },
        "iterations": 100,
        "runs": 2,
        "variants": ["non-cooperative", {"kind": "ud-nspe", "tau": 0.1}],
        "snr_db": [10, 20]
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> Result<ExperimentConfig> {
        let mut v: serde_json::Value = serde_json::from_str(SMALL).unwrap();
        edit(&mut v);
        ExperimentConfig::from_json_str(&v.to_string(), None)
    }

    fn message(r: Result<ExperimentConfig>) -> String {
        r.unwrap_err().to_string()
    }

    #[test]
    fn small_config_resolves() {
        let c = with(|_| {}).unwrap();
        assert_eq!(c.network.len(), 2);
        assert_eq!(c.auto_snr, vec![false, true]);
        assert_eq!(c.variants[1].threshold, Some(ThresholdRule::Absolute(0.1)));
        assert_eq!(c.window_start(), 90);
        assert_eq!(c.record_every, 1);
    }

    #[test]
    fn zero_runs_is_rejected() {
        assert!(message(with(|v| v["runs"] = 0.into())).contains("runs"));
        assert!(message(with(|v| v["iterations"] = 0.into())).contains("iterations"));
    }

    #[test]
    fn ud_without_threshold_is_rejected() {
        let m = message(with(|v| v["variants"] = serde_json::json!(["ud-nspe"])));
        assert!(m.contains("variants[0]") && m.contains("threshold"), "{m}");
        // a global threshold satisfies it
        let c = with(|v| {
            v["variants"] = serde_json::json!(["ud-nspe"]);
            v["threshold"] = serde_json::json!({"separation_factor": 0.25});
        })
        .unwrap();
        assert_eq!(c.variants[0].threshold, Some(ThresholdRule::SeparationFactor(0.25)));
    }

    #[test]
    fn disconnected_topology_is_rejected() {
        let m = message(with(|v| v["network"]["edges"] = serde_json::json!([])));
        assert!(m.contains("disconnected"), "{m}");
    }

    #[test]
    fn infeasible_snr_is_rejected() {
        let m = message(with(|v| v["snr_db"] = serde_json::json!([100, 110])));
        assert!(m.contains("snr_db") && m.contains("infeasible"), "{m}");
        let m = message(with(|v| v["snr_db"] = serde_json::json!([20, 10])));
        assert!(m.contains("snr_db"), "{m}");
    }

    #[test]
    fn unknown_fields_and_variants_are_rejected() {
        assert!(message(with(|v| v["bogus"] = 1.into())).contains("parse error"));
        assert!(message(with(|v| v["variants"] = serde_json::json!(["lms"]))).contains("unknown variant"));
        let m = message(with(|v| v["variants"] = serde_json::json!(["non-cooperative", "non-cooperative"])));
        assert!(m.contains("duplicate"), "{m}");
    }

    #[test]
    fn bad_ids_name_the_field() {
        let m = message(with(|v| v["network"]["nodes"][1]["tasks"] = serde_json::json!([7])));
        assert!(m.contains("network.nodes[1].tasks"), "{m}");
        let m = message(with(|v| v["network"]["edges"] = serde_json::json!([[1, 1]])));
        assert!(m.contains("network.edges[0]"), "{m}");
        let m = message(with(|v| v["network"]["nodes"][0]["regressor_var"] = "auto".into()));
        assert!(m.contains("regressor_var"), "{m}");
    }

    #[test]
    fn path_reference_needs_base_dir() {
        let m = message(with(|v| v["network"] = "net.json".into()));
        assert!(m.contains("path references"), "{m}");
    }

    #[test]
    fn overrides_entries_are_checked() {
        let c = with(|v| {
            v["threshold_overrides"] =
                serde_json::json!([{"node_k": 1, "task_t": 1, "node_l": 2, "task_p": 2, "tau": 0.5}]);
        })
        .unwrap();
        assert_eq!(c.threshold_overrides, vec![(Pair::new(0, 0), Pair::new(1, 1), 0.5)]);
        let m = message(with(|v| {
            v["threshold_overrides"] =
                serde_json::json!([{"node_k": 1, "task_t": 2, "node_l": 2, "task_p": 2, "tau": 0.5}]);
        }));
        assert!(m.contains("threshold_overrides[0]"), "{m}");
    }

    #[test]
    fn separation_rule_uses_closest_pair() {
        let tasks: Vec<_> = (0..3).map(|i| TaskSpec { id: TaskId(i), dim: 2 }).collect();
        let truth = GroundTruth::new(&tasks, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_eq!(ThresholdRule::SeparationFactor(0.25).resolve(&truth).unwrap(), 0.0625);
        assert_eq!(ThresholdRule::Absolute(3.0).resolve(&truth).unwrap(), 3.0);
    }
}
