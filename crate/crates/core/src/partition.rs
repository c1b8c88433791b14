//! Splitting a roster into deliberation subgroups of 4 to 7 members.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ParticipantId;

pub const MIN_SUBGROUP: usize = 4;
pub const MAX_SUBGROUP: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("roster too small for swarm mode ({0} participants, need at least {MIN_SUBGROUP})")]
    RosterTooSmall(usize),
    #[error("target subgroup size {0} outside [{MIN_SUBGROUP}, {MAX_SUBGROUP}]")]
    TargetOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub subgroups: Vec<BTreeSet<ParticipantId>>,
    pub target_size: usize,
}

impl PartitionPlan {
    pub fn sizes(&self) -> Vec<usize> {
        self.subgroups.iter().map(BTreeSet::len).collect()
    }
}

/// Number of groups for `n` members: `round(n / target)`, moved the least
/// distance needed so that balanced sizes stay within [4, 7].
pub fn group_count(n: usize, target: usize) -> usize {
    if n <= MAX_SUBGROUP {
        return 1;
    }
    // Half rounds up: 10 / 4 = 2.5 -> 3.
    let ideal = (2 * n + target) / (2 * target);
    let lo = n.div_ceil(MAX_SUBGROUP);
    let hi = n / MIN_SUBGROUP;
    if lo > hi {
        // Only reachable for n < 8.
        return ideal.max(1);
    }
    ideal.clamp(lo, hi)
}

/// Seeded shuffle of `roster`, then balanced chunks of `group_count` groups.
/// Larger groups come first.
pub fn partition(
    roster: &[ParticipantId],
    target_size: usize,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    if !(MIN_SUBGROUP..=MAX_SUBGROUP).contains(&target_size) {
        return Err(PartitionError::TargetOutOfRange(target_size));
    }
    let n = roster.len();
    if n < MIN_SUBGROUP {
        return Err(PartitionError::RosterTooSmall(n));
    }
    let k = group_count(n, target_size);
    let mut shuffled = roster.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut subgroups = Vec::with_capacity(k);
    let mut it = shuffled.into_iter();
    for i in 0..k {
        let size = base + usize::from(i < extra);
        subgroups.push(it.by_ref().take(size).collect());
    }
    Ok(PartitionPlan {
        subgroups,
        target_size,
    })
}

/// Where a participant arriving after the session started should go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LateJoin {
    /// Index into the sizes slice.
    Append(usize),
    /// No subgroup has room; hold the participant until enough others queue.
    Queue,
}

/// Smallest subgroup (lowest index on ties) if it stays within the size cap.
pub fn place_late_joiner(sizes: &[usize]) -> LateJoin {
    match sizes.iter().enumerate().min_by_key(|&(i, &s)| (s, i)) {
        Some((i, &s)) if s < MAX_SUBGROUP => LateJoin::Append(i),
        _ => LateJoin::Queue,
    }
}
