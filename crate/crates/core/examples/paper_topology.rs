//! Prints the edge list of the fixed-seed 10-node geometric graph used by
//! `presets/paper.json`, in the 1-based form the config expects.
//!
//!     cargo run -p nspe-core --example paper_topology -- [seed] [radius]

use nspe_core::network::Topology;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2016);
    let radius: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let topology = Topology::random_geometric(10, radius, seed);
    let edges: Vec<String> = topology
        .edges()
        .iter()
        .map(|(a, b)| format!("[{a}, {b}]"))
        .collect();
    println!("[{}]", edges.join(", "));
    for k in 0..topology.size() {
        let hood: Vec<String> = topology
            .neighborhood(nspe_core::network::NodeId(k))
            .iter()
            .map(ToString::to_string)
            .collect();
        eprintln!("N_{} = {{{}}}", k + 1, hood.join(","));
    }
}
