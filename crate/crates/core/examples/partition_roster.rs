//! Splits rosters into balanced subgroups and places late arrivals.
//!
//! cargo run -p csi-core --example partition_roster -- [roster size] [target size]

use csi_core::model::ParticipantId;
use csi_core::partition::{partition, place_late_joiner, LateJoin};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(75), |s| s.parse())?;
    let target: usize = args.next().map_or(Ok(5), |s| s.parse())?;
    let roster: Vec<ParticipantId> = (1..=n)
        .map(|i| ParticipantId::new(format!("p{i:04}")))
        .collect();

    let plan = partition(&roster, target, 42)?;
    println!(
        "{n} participants at target {target}: {} subgroups, sizes {:?}",
        plan.subgroups.len(),
        plan.sizes()
    );
    for (i, members) in plan.subgroups.iter().take(3).enumerate() {
        let ids: Vec<&str> = members.iter().map(ParticipantId::as_str).collect();
        println!("  g{:02}: {}", i + 1, ids.join(" "));
    }

    // Late arrivals fill the smallest subgroup until every one is full.
    let mut sizes = plan.sizes();
    let mut queued = 0;
    for _ in 0..(sizes.len() * 3) {
        match place_late_joiner(&sizes) {
            LateJoin::Append(i) => sizes[i] += 1,
            LateJoin::Queue => queued += 1,
        }
    }
    println!(
        "after {} late joiners: sizes {sizes:?}, {queued} queued",
        plan.sizes().len() * 3
    );
    Ok(())
}
