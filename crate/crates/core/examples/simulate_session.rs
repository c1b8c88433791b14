//! Runs the default 75-bot swarm session and prints propagation numbers.
//!
//! cargo run -p csi-core --example simulate_session -- [seed]

use csi_core::model::Topology;
use csi_core::sim::{median_full_coverage, run, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let scenario = Scenario::default_csi();
    for topology in [Topology::FullyConnected, Topology::Ring] {
        let result = run(&scenario.clone().with_topology(topology), seed)?;
        let coverage: Vec<usize> = result.propagation.iter().map(|p| p.coverage).collect();
        println!("{topology:?}");
        println!(
            "  events {}, insights {}, deliveries {}",
            result.log.len(),
            coverage.len(),
            result.audit.deliveries
        );
        println!("  coverage per insight {coverage:?}");
        println!(
            "  share reaching 10 subgroups {:.3}",
            result.reach_share(10)
        );
        println!(
            "  median time to full coverage {:?} ms",
            median_full_coverage(&result.propagation)
        );
        println!(
            "  self {} duplicate {} starvation {}",
            result.audit.self_deliveries,
            result.audit.duplicate_deliveries,
            result.audit.starvation_violations
        );
        println!(
            "  participation spread {} gini {:.3}",
            result.participation.spread, result.participation.gini
        );
    }
    Ok(())
}
