//! Times the paper preset for one run: `bench_round [iterations]`.

use std::time::Instant;

use nspe_core::harness::{presets, run_experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let mut config = presets::paper()?;
    config.runs = 1;
    config.iterations = iters;
    config.record_every = 1000.min(iters);
    if let Some(keep) = std::env::args().nth(2) {
        config.variants.retain(|v| keep.split(',').any(|k| k == v.label));
    }
    let start = Instant::now();
    let result = run_experiment(&config)?;
    let secs = start.elapsed().as_secs_f64();
    println!("{iters} iterations in {secs:.3} s ({:.2} us/iteration)", secs * 1e6 / iters as f64);
    for (v, spec) in config.variants.iter().enumerate() {
        println!("{:>16}: {:?} dB", spec.label, result.steady_state_db(v, "network"));
    }
    Ok(())
}
