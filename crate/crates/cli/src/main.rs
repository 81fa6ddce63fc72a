//! `nspe`: run experiments, predict blind-fusion bias, validate configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nspe_core::analysis::{build_weight_matrix, static_weights, step_size_bound, theoretical_bias};
use nspe_core::estimators::Variant;
use nspe_core::harness::{
    emit_outputs, load_config_with, prepare_output_dir, prepare_run, run_experiment, summarize,
    ExperimentConfig, Overrides, VariantOutcome,
};
use nspe_core::network::validate_topology;
use nspe_core::{Error, ErrorCategory};

#[derive(Parser)]
#[command(name = "nspe", version, about = "Node-specific parameter estimation over diffusion networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every configured variant and write traces, links and a summary.
    Run(CommonArgs),
    /// Predict the steady-state bias of the static strategies without simulating.
    Bias(CommonArgs),
    /// Check a config and its topology.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> nspe_core::Result<ExperimentConfig> {
        let overrides = Overrides {
            master_seed: self.seed,
            runs: self.runs,
            iterations: self.iters,
            output_dir: self.out.clone(),
        };
        load_config_with(&self.config, &overrides)
    }
}

fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("nspe-out"))
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Divergence => 3,
        ErrorCategory::Io => 4,
        ErrorCategory::Model => 1,
    }
}

fn run(args: &CommonArgs) -> nspe_core::Result<()> {
    let config = args.load()?;
    let dir = output_dir(&config);
    prepare_output_dir(&dir)?;
    let result = run_experiment(&config)?;
    emit_outputs(&result, &dir)?;
    let summary = summarize(&result);
    for v in &summary.variants {
        let network = v.steady_state.iter().find(|g| g.group == "network");
        let db = network.and_then(|g| g.msd_db).map_or("n/a".to_string(), |d| format!("{d:.2} dB"));
        print!("{:>16}  steady-state network MSD {db}", v.label);
        if v.diverged_runs > 0 {
            print!("  ({} of {} runs diverged)", v.diverged_runs, config.runs);
        }
        if let Some(c) = &v.clustering {
            print!("  precision {:.4} recall {:.4}", c.precision.mean, c.recall.mean);
        }
        println!();
    }
    println!("wrote {}", dir.display());
    // outputs are kept; divergence still sets the exit status
    let first_divergence = result.runs.iter().flat_map(|r| &r.outcomes).find_map(|o| match o {
        VariantOutcome::Diverged { iteration } => Some(*iteration),
        VariantOutcome::Finished(_) => None,
    });
    match first_divergence {
        Some(iteration) => Err(Error::Divergence { iteration }),
        None => Ok(()),
    }
}

fn bias(args: &CommonArgs) -> nspe_core::Result<()> {
    let config = args.load()?;
    let dir = output_dir(&config);
    prepare_output_dir(&dir)?;
    let (network, truth) = prepare_run(&config, 0)?;
    let index = network.stacked_index();
    let mut reports = Vec::new();
    for variant in [Variant::NonCooperative, Variant::OracleDnspe, Variant::BlindDnspe] {
        let c = build_weight_matrix(&static_weights(&variant, &network)?, &index)?;
        let prediction = theoretical_bias(&c, &network, &truth, &index)?;
        let pairs: Vec<_> = prediction
            .pairs
            .iter()
            .map(|p| json!({"node": p.pair.node.0 + 1, "task": p.pair.task.0 + 1, "bias": p.bias}))
            .collect();
        println!(
            "{:>16}  spectral radius {:.6}  {}",
            variant.kind_name(),
            prediction.spectral_radius,
            if prediction.converged { "mean-stable" } else { "not mean-stable" }
        );
        reports.push(json!({
            "variant": variant.kind_name(),
            "spectral_radius": prediction.spectral_radius,
            "converged": prediction.converged,
            "pairs": pairs,
        }));
    }
    let nodes: Vec<_> = network
        .nodes()
        .iter()
        .map(|n| {
            json!({
                "node": n.id.0 + 1,
                "step_size": n.step_size,
                "regressor_var": n.regressor_var,
                "step_size_bound": step_size_bound(n),
            })
        })
        .collect();
    let truth_json: Vec<_> = truth
        .values()
        .iter()
        .enumerate()
        .map(|(t, v)| json!({"task": t + 1, "values": v}))
        .collect();
    let body = json!({"ground_truth": truth_json, "nodes": nodes, "variants": reports});
    let path = dir.join("bias.json");
    let mut text = serde_json::to_string_pretty(&body).expect("bias report serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn validate(args: &CommonArgs) -> nspe_core::Result<()> {
    let config = args.load()?;
    let report = validate_topology(config.network.topology(), config.network.nodes())?;
    let index = config.network.stacked_index();
    println!(
        "ok: {} nodes, {} tasks, {} node-task pairs, {} links, {} runs x {} iterations",
        config.network.len(),
        config.network.tasks().len(),
        index.len(),
        config.network.topology().edges().len(),
        config.runs,
        config.iterations
    );
    println!(
        "topology: symmetric {}, self-membership {}, connected {}",
        report.symmetric(),
        report.self_membership(),
        report.connected()
    );
    let labels: Vec<&str> = config.variants.iter().map(|v| v.label.as_str()).collect();
    println!("variants: {}", labels.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Bias(a) => bias(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
