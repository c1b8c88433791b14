//! Compares fully connected routing with the ring baseline across seeds.
//!
//! cargo run -p csi-core --release --example topology_compare -- [seeds] [idea_subgroups]

use csi_core::sim::{compare_topologies, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(Ok(5), |s| s.parse())?;
    let mut scenario = Scenario::default_csi();
    scenario.script.idea_subgroups = args.next().map(|s| s.parse()).transpose()?;
    let seeds: Vec<u64> = (1..=seeds).collect();
    for c in compare_topologies(&scenario, &seeds)? {
        let show = |t: Option<u64>| {
            t.map_or("never".to_owned(), |ms| {
                format!("{:.0} s", ms as f64 / 1000.0)
            })
        };
        println!(
            "seed {:>3}: fully connected {:>7}, ring {:>7}  {}",
            c.seed,
            show(c.fully_connected),
            show(c.ring),
            if c.fully_connected_wins() {
                "fully connected faster"
            } else {
                "ring not slower"
            }
        );
    }
    Ok(())
}
