//! Brute-force delivery oracle shared by the property and acceptance suites.

use std::collections::{BTreeMap, BTreeSet};

use csi_core::matchmaker::{Matchmaker, RoutingError, RoutingParams};
use csi_core::model::{Insight, InsightId, SubgroupId, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 16] = [
    "cone", "plunger", "paint", "stamp", "drum", "garden", "lamp", "party", "music", "hat",
    "circle", "wall", "bird", "boat", "rope", "glass",
];

fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<&'static str> {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect()
}

fn jaccard_novelty(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    1.0 - inter / union
}

/// Builds a random small routing state, asks the matchmaker for each
/// receiver's pick and compares it with an exhaustive search.
pub fn check_instance(seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RoutingParams {
        starvation_threshold: 45_000,
        novelty_floor: [0.0, 0.3, 0.6][rng.gen_range(0..3)],
        dedup_floor: 0.2,
        pool_max: 64,
        profile_window: 4,
        topology: Topology::FullyConnected,
    };
    let mut mm = Matchmaker::new(params.clone());
    let groups: Vec<SubgroupId> = (1..=rng.gen_range(2..=6))
        .map(|g| SubgroupId::new(format!("g{g:02}")))
        .collect();
    for g in &groups {
        mm.add_subgroup(g.clone(), 0);
    }

    // Profiles: the last `profile_window` messages per subgroup.
    let mut profiles: BTreeMap<SubgroupId, Vec<Vec<&str>>> = BTreeMap::new();
    for g in &groups {
        for _ in 0..rng.gen_range(0..=6) {
            let msg = words(&mut rng, 0, 4);
            mm.observe(g, &msg.join(" ")).unwrap();
            profiles.entry(g.clone()).or_default().push(msg);
        }
    }

    // Insights, several sharing a creation time to exercise tie-breaks.
    for i in 0..rng.gen_range(0..=8) {
        let source = groups[rng.gen_range(0..groups.len())].clone();
        let text = words(&mut rng, 1, 4).join(" ");
        mm.enqueue_insight(Insight {
            insight_id: InsightId::new(format!("i{:02}", rng.gen_range(0..99) * 100 + i)),
            source_subgroup: source,
            text,
            source_message_ids: vec!["m1".into()],
            created_at: rng.gen_range(0..3) * 1_000,
            delivered_to: BTreeSet::new(),
        });
    }

    // Some prior deliveries at random times.
    let pooled: Vec<Insight> = mm.pool().insights().cloned().collect();
    for ins in &pooled {
        for g in &groups {
            if *g != ins.source_subgroup && rng.gen_bool(0.25) {
                let at = rng.gen_range(0..60_000);
                let _ = mm.record_delivery(&ins.insight_id, g, at);
            }
        }
    }
    let now = 60_000;

    let pool: Vec<Insight> = mm.pool().insights().cloned().collect();
    let (mut picked, mut checked) = (0, 0);
    for g in &groups {
        let route = mm.route(g).unwrap();
        let eligible = now - route.last_delivery_at >= params.starvation_threshold;
        let got = mm.select_delivery(g, now);
        if !eligible {
            assert!(
                matches!(got, Err(RoutingError::NotEligible { .. })),
                "seed {seed}"
            );
            continue;
        }
        let window = profiles.get(g).map_or(&[][..], |v| {
            &v[v.len().saturating_sub(params.profile_window)..]
        });
        let profile: BTreeSet<&str> = window.iter().flatten().copied().collect();
        let mut best: Option<(&Insight, f64)> = None;
        for ins in &pool {
            if ins.source_subgroup == *g || ins.delivered_to.contains(g) {
                continue;
            }
            let tokens: BTreeSet<&str> = ins.text.split_whitespace().collect();
            let nov = jaccard_novelty(&tokens, &profile);
            if nov < params.novelty_floor {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, bn)) => {
                    nov > bn
                        || (nov == bn
                            && (ins.created_at, &ins.insight_id) < (b.created_at, &b.insight_id))
                }
            };
            if better {
                best = Some((ins, nov));
            }
        }
        let got = got.unwrap();
        checked += 1;
        picked += usize::from(got.is_some());
        assert_eq!(
            got.as_ref().map(|c| c.insight.insight_id.clone()),
            best.map(|(b, _)| b.insight_id.clone()),
            "seed {seed}, receiver {g}"
        );
        if let (Some(c), Some((_, n))) = (got, best) {
            assert!((c.novelty - n).abs() < 1e-12);
        }
    }
    (picked, checked)
}
