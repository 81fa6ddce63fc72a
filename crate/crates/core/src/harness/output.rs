//! Result files: `traces.csv`, `links.csv` and `summary.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{to_db, LinkCounts};
use crate::error::{Error, Result};

use super::config::{ConfigFile, VariantKind};
use super::experiment::{mean, stderr, ExperimentResult};

/// Slope below which the trailing window counts as steady, in dB per 100
/// iterations.
pub const STEADY_SLOPE_DB_PER_100: f64 = 0.01;

/// Creates `dir` if needed and proves it writable.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".nspe-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ConfigFile,
    pub window: WindowInfo,
    pub variants: Vec<VariantSummary>,
    pub bias: Vec<BiasTable>,
    /// Wall-clock figures; the only non-deterministic section.
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowInfo {
    /// First completed-round count inside the window.
    pub first_iteration: usize,
    pub last_iteration: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub label: String,
    pub kind: &'static str,
    pub runs_finished: usize,
    pub diverged_runs: usize,
    /// 1-based indices of diverged runs.
    pub diverged_run_indices: Vec<usize>,
    pub steady_state: Vec<GroupSteadyState>,
    /// Least-squares slope of the mean network trace over the window.
    pub window_slope_db_per_100: Option<f64>,
    pub steady: Option<bool>,
    pub clustering: Option<ClusteringSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSteadyState {
    pub group: String,
    pub msd_linear: Option<f64>,
    pub msd_db: Option<f64>,
    pub msd_linear_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusteringSummary {
    /// Window link decisions pooled over finished runs.
    pub pooled: LinkCounts,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub false_alarm_rate: MetricSummary,
    pub misdetection_rate: MetricSummary,
    pub error_rate: MetricSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasTable {
    pub variant: String,
    pub spectral_radius: Vec<f64>,
    pub converged: bool,
    pub rows: Vec<BiasRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasRow {
    pub node: usize,
    pub task: usize,
    pub component: usize,
    pub theoretical: f64,
    pub empirical: Option<f64>,
    pub empirical_stderr: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub run_seconds: Vec<f64>,
}

fn metric(values: &[f64]) -> MetricSummary {
    MetricSummary {
        mean: mean(values.iter().copied()).unwrap_or(f64::NAN),
        stderr: stderr(values),
    }
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn summarize(result: &ExperimentResult) -> Summary {
    let config = &result.config;
    let window_start = config.window_start();
    let mut echo = config.echo.clone();
    echo.output_dir = None;

    let mut variants = Vec::new();
    let mut bias = Vec::new();
    for (v, spec) in config.variants.iter().enumerate() {
        let steady_state = result
            .groups
            .iter()
            .enumerate()
            .map(|(g, label)| {
                let values: Vec<f64> = result.finished(v).map(|r| r.window_msd[g]).collect();
                let linear = mean(values.iter().copied());
                GroupSteadyState {
                    group: label.clone(),
                    msd_linear: linear,
                    msd_db: linear.map(to_db),
                    msd_linear_stderr: stderr(&values),
                }
            })
            .collect();

        let window_slope = result.mean_trace(v).and_then(|trace| {
            let pts: Vec<(f64, f64)> = trace
                .iterations
                .iter()
                .zip(trace.db(0))
                .filter(|(&it, _)| it > window_start)
                .map(|(&it, db)| (it as f64, db * 100.0))
                .collect();
            slope(&pts)
        });

        let clustering = (spec.kind == VariantKind::UdNspe && result.finished(v).next().is_some()).then(|| {
            let mut pooled = LinkCounts::default();
            for r in result.finished(v) {
                if let Some(l) = &r.window_links {
                    pooled.add(l);
                }
            }
            ClusteringSummary {
                pooled,
                precision: metric(&result.link_metric(v, LinkCounts::precision)),
                recall: metric(&result.link_metric(v, LinkCounts::recall)),
                false_alarm_rate: metric(&result.link_metric(v, LinkCounts::false_alarm_rate)),
                misdetection_rate: metric(&result.link_metric(v, LinkCounts::misdetection_rate)),
                error_rate: metric(&result.link_metric(v, LinkCounts::error_rate)),
            }
        });

        variants.push(VariantSummary {
            label: spec.label.clone(),
            kind: spec.kind.name(),
            runs_finished: result.finished(v).count(),
            diverged_runs: result.divergence_count(v),
            diverged_run_indices: result
                .runs
                .iter()
                .filter(|r| r.outcomes[v].finished().is_none())
                .map(|r| r.run_index + 1)
                .collect(),
            steady_state,
            window_slope_db_per_100: window_slope,
            steady: window_slope.map(|s| s.abs() < STEADY_SLOPE_DB_PER_100),
            clustering,
        });

        if spec.kind == VariantKind::BlindDnspe {
            if let Some(table) = bias_table(result, v) {
                bias.push(table);
            }
        }
    }

    Summary {
        config: echo,
        window: WindowInfo {
            first_iteration: window_start + 1,
            last_iteration: config.iterations,
        },
        variants,
        bias,
        timing: Timing {
            total_seconds: result.elapsed.as_secs_f64(),
            run_seconds: result.runs.iter().map(|r| r.elapsed.as_secs_f64()).collect(),
        },
    }
}

fn bias_table(result: &ExperimentResult, v: usize) -> Option<BiasTable> {
    let radii: Vec<f64> = result
        .runs
        .iter()
        .map(|r| r.blind_bias.as_ref().map(|b| b.spectral_radius))
        .collect::<Option<_>>()?;
    let converged = result.runs.iter().all(|r| r.blind_bias.as_ref().is_some_and(|b| b.converged));
    let mut rows = Vec::new();
    if let Some(theory) = result.theoretical_blind_bias() {
        let empirical = result.empirical_bias(v);
        let se = result.empirical_bias_stderr(v);
        let index = &result.index;
        for p in 0..index.len() {
            let pair = index.pair(p);
            for (c, j) in index.span(p).enumerate() {
                let emp = empirical.as_ref().map(|e| e[j]);
                rows.push(BiasRow {
                    node: pair.node.0 + 1,
                    task: pair.task.0 + 1,
                    component: c + 1,
                    theoretical: theory[j],
                    empirical: emp,
                    empirical_stderr: se.as_ref().map(|s| s[j]),
                    relative_error: emp.map(|e| (e - theory[j]).abs() / theory[j].abs()),
                });
            }
        }
    }
    Some(BiasTable {
        variant: result.config.variants[v].label.clone(),
        spectral_radius: radii,
        converged,
        rows,
    })
}

/// Mean learning curves: `iteration,algorithm,group,msd_linear,msd_db`.
pub fn traces_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("iteration,algorithm,group,msd_linear,msd_db\n");
    for (v, spec) in result.config.variants.iter().enumerate() {
        let Some(trace) = result.mean_trace(v) else {
            continue;
        };
        for (g, label) in trace.labels.iter().enumerate() {
            for (&it, &x) in trace.iterations.iter().zip(&trace.linear[g]) {
                let _ = writeln!(out, "{it},{},{label},{x:e},{}", spec.label, to_db(x));
            }
        }
    }
    out
}

/// Final cluster links of the first UD-NSPE variant:
/// `run,node_k,task_t,node_l,task_p,kept`, all 1-based.
pub fn links_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("run,node_k,task_t,node_l,task_p,kept\n");
    let Some(v) = result.config.variants.iter().position(|s| s.kind == VariantKind::UdNspe) else {
        return out;
    };
    for run in &result.runs {
        let Some(links) = run.outcomes[v].finished().and_then(|r| r.final_links.as_ref()) else {
            continue;
        };
        for l in links {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                run.run_index + 1,
                l.owner.node.0 + 1,
                l.owner.task.0 + 1,
                l.candidate.node.0 + 1,
                l.candidate.task.0 + 1,
                u8::from(l.kept)
            );
        }
    }
    out
}

pub fn summary_json(result: &ExperimentResult) -> String {
    let mut s = serde_json::to_string_pretty(&summarize(result)).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes the three result files into `dir` and returns their paths.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare_output_dir(dir)?;
    let files = [
        ("traces.csv", traces_csv(result)),
        ("links.csv", links_csv(result)),
        ("summary.json", summary_json(result)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
