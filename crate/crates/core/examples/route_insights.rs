//! Routes pooled insights to starved subgroups by novelty.
//!
//! cargo run -p csi-core --example route_insights

use std::collections::BTreeSet;

use csi_core::matchmaker::{Matchmaker, RoutingParams};
use csi_core::model::{Insight, InsightId, SubgroupId};

fn insight(id: &str, from: &SubgroupId, text: &str) -> Insight {
    Insight {
        insight_id: InsightId::new(id),
        source_subgroup: from.clone(),
        text: text.into(),
        source_message_ids: Vec::new(),
        created_at: 0,
        delivered_to: BTreeSet::new(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let groups: Vec<SubgroupId> = (1..=3)
        .map(|i| SubgroupId::new(format!("g{i:02}")))
        .collect();
    let mut mm = Matchmaker::new(RoutingParams::default());
    for g in &groups {
        mm.add_subgroup(g.clone(), 0);
    }
    mm.observe(&groups[0], "plungers make great drum mallets for kids")?;
    mm.observe(&groups[1], "unclog sinks and showers with a plunger")?;
    mm.observe(&groups[2], "plunger drum mallets sound surprisingly good")?;

    mm.enqueue_insight(insight(
        "i00001",
        &groups[0],
        "use plungers as drum mallets for kids",
    ));
    mm.enqueue_insight(insight(
        "i00002",
        &groups[1],
        "a plunger can pull dents out of car doors",
    ));

    for receiver in &groups {
        let scored: Vec<String> = mm
            .candidates(receiver)?
            .iter()
            .map(|c| format!("{} {:.2}", c.insight.insight_id, c.novelty))
            .collect();
        println!("{receiver} candidates: [{}]", scored.join(", "));
    }

    // Nobody is starved until the threshold has passed.
    let threshold = mm.params().starvation_threshold;
    println!("tick at 1 s: {} deliveries", mm.tick(1_000).len());
    for d in mm.tick(threshold) {
        println!(
            "tick at {} s: {} -> {} (novelty {:.2})",
            threshold / 1000,
            d.insight_id,
            d.receiver,
            d.novelty
        );
    }
    for d in mm.tick(2 * threshold) {
        println!(
            "tick at {} s: {} -> {} (novelty {:.2})",
            2 * threshold / 1000,
            d.insight_id,
            d.receiver,
            d.novelty
        );
    }
    println!(
        "pool after fully propagated insights leave: {}",
        mm.pool().len()
    );
    Ok(())
}
