//! Insight routing between subgroups.
//!
//! The matchmaker keeps a pool of insights waiting to spread, a content
//! profile of what each subgroup has recently discussed, and the time each
//! subgroup last received a relay. On every tick, subgroups that have gone
//! `starvation_threshold` without a relay are served most-starved first, each
//! receiving the pooled insight that is most novel against its own profile.
//! All routing mutations go through [`Matchmaker::record_delivery`], so the
//! state can be rebuilt from the delivery history alone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::model::{Insight, InsightId, Millis, SessionConfig, SubgroupId, Topology};
use crate::text::{token_set, tokenize, TokenBag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("subgroup {0} is not routed by this matchmaker")]
    UnknownSubgroup(SubgroupId),
    #[error("subgroup {subgroup} is not eligible until {eligible_at} ms (now {now} ms)")]
    NotEligible {
        subgroup: SubgroupId,
        eligible_at: Millis,
        now: Millis,
    },
    #[error("insight {0} is not in the pool")]
    UnknownInsight(InsightId),
    #[error("insight {0} cannot be delivered to its own source subgroup")]
    SelfDelivery(InsightId),
    #[error("insight {insight} was already delivered to {subgroup}")]
    DuplicateDelivery {
        insight: InsightId,
        subgroup: SubgroupId,
    },
}

/// Scores how much an insight would change a subgroup's conversation.
pub trait NoveltyScorer {
    /// A value in [0, 1]; higher means more novel to the receiver.
    fn score(&self, insight_tokens: &BTreeSet<String>, profile: &TokenBag) -> f64;
}

/// Reference scorer: one minus the Jaccard similarity of token sets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenJaccard;

impl NoveltyScorer for TokenJaccard {
    fn score(&self, insight_tokens: &BTreeSet<String>, profile: &TokenBag) -> f64 {
        if insight_tokens.is_empty() && profile.is_empty() {
            return 0.0;
        }
        let inter = insight_tokens
            .iter()
            .filter(|t| profile.contains(t))
            .count();
        let union = insight_tokens.len() + profile.distinct().count() - inter;
        1.0 - inter as f64 / union as f64
    }
}

/// `1 - Jaccard(tokens(insight_text), set(profile))`; 0 when both are empty.
pub fn novelty(insight_text: &str, profile: &TokenBag) -> f64 {
    TokenJaccard.score(&token_set(insight_text), profile)
}

/// Token multiset over the last `window` messages of one subgroup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentProfile {
    window: usize,
    recent: VecDeque<Vec<String>>,
    bag: TokenBag,
}

impl ContentProfile {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            recent: VecDeque::with_capacity(window),
            bag: TokenBag::new(),
        }
    }

    pub fn push(&mut self, text: &str) {
        let tokens = tokenize(text);
        self.bag.extend(tokens.iter().cloned());
        self.recent.push_back(tokens);
        while self.recent.len() > self.window {
            if let Some(old) = self.recent.pop_front() {
                for t in &old {
                    self.bag.remove(t);
                }
            }
        }
    }

    pub fn bag(&self) -> &TokenBag {
        &self.bag
    }

    pub fn message_count(&self) -> usize {
        self.recent.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingState {
    pub last_delivery_at: Millis,
    pub content_profile: ContentProfile,
    pub received_insight_ids: BTreeSet<InsightId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PoolEntry {
    insight: Insight,
    tokens: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnqueueOutcome {
    Added,
    /// Added, and the oldest entry was dropped to respect `max_size`.
    AddedWithEviction,
    /// A near-duplicate from the same source is already pooled.
    Duplicate,
}

/// Insights not yet fully propagated, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InsightPool {
    entries: VecDeque<PoolEntry>,
    max_size: usize,
    dedup_floor: f64,
}

impl InsightPool {
    pub fn new(max_size: usize, dedup_floor: f64) -> Self {
        Self {
            entries: VecDeque::new(),
            max_size,
            dedup_floor,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &InsightId) -> bool {
        self.entries.iter().any(|e| &e.insight.insight_id == id)
    }

    pub fn get(&self, id: &InsightId) -> Option<&Insight> {
        self.entries
            .iter()
            .find(|e| &e.insight.insight_id == id)
            .map(|e| &e.insight)
    }

    pub fn insights(&self) -> impl Iterator<Item = &Insight> {
        self.entries.iter().map(|e| &e.insight)
    }

    /// Whether `insight` would be rejected as a near-duplicate.
    pub fn is_duplicate(&self, insight: &Insight) -> bool {
        let tokens = token_set(&insight.text);
        self.entries
            .iter()
            .filter(|e| e.insight.source_subgroup == insight.source_subgroup)
            .any(|e| set_novelty(&tokens, &e.tokens) < self.dedup_floor)
    }

    pub fn enqueue(&mut self, insight: Insight) -> EnqueueOutcome {
        if self.is_duplicate(&insight) {
            return EnqueueOutcome::Duplicate;
        }
        let tokens = token_set(&insight.text);
        self.entries.push_back(PoolEntry { insight, tokens });
        if self.entries.len() > self.max_size {
            self.entries.pop_front();
            EnqueueOutcome::AddedWithEviction
        } else {
            EnqueueOutcome::Added
        }
    }

    fn entry_mut(&mut self, id: &InsightId) -> Option<&mut PoolEntry> {
        self.entries
            .iter_mut()
            .find(|e| &e.insight.insight_id == id)
    }

    fn retain(&mut self, mut keep: impl FnMut(&Insight) -> bool) -> Vec<InsightId> {
        let mut removed = Vec::new();
        self.entries.retain(|e| {
            let k = keep(&e.insight);
            if !k {
                removed.push(e.insight.insight_id.clone());
            }
            k
        });
        removed
    }
}

fn set_novelty(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    1.0 - crate::text::jaccard_sets(a, b)
}

/// Tunables, taken from [`SessionConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingParams {
    pub starvation_threshold: Millis,
    pub novelty_floor: f64,
    pub dedup_floor: f64,
    pub pool_max: usize,
    pub profile_window: usize,
    pub topology: Topology,
}

impl RoutingParams {
    pub fn from_config(config: &SessionConfig) -> Self {
        Self {
            starvation_threshold: config.starvation_threshold_ms(),
            novelty_floor: config.novelty_floor,
            dedup_floor: config.dedup_floor,
            pool_max: config.pool_max,
            profile_window: config.profile_window,
            topology: config.topology,
        }
    }
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self::from_config(&SessionConfig::csi("default", 5))
    }
}

/// One scheduled relay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub receiver: SubgroupId,
    pub insight_id: InsightId,
    pub novelty: f64,
}

/// A pooled insight that may go to a given receiver, with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<'a> {
    pub insight: &'a Insight,
    pub novelty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matchmaker<S = TokenJaccard> {
    params: RoutingParams,
    pool: InsightPool,
    routes: BTreeMap<SubgroupId, RoutingState>,
    scorer: S,
}

impl Matchmaker<TokenJaccard> {
    pub fn new(params: RoutingParams) -> Self {
        Self::with_scorer(params, TokenJaccard)
    }
}

impl<S: NoveltyScorer> Matchmaker<S> {
    pub fn with_scorer(params: RoutingParams, scorer: S) -> Self {
        let pool = InsightPool::new(params.pool_max, params.dedup_floor);
        Self {
            params,
            pool,
            routes: BTreeMap::new(),
            scorer,
        }
    }

    pub fn params(&self) -> &RoutingParams {
        &self.params
    }

    pub fn pool(&self) -> &InsightPool {
        &self.pool
    }

    pub fn route(&self, subgroup: &SubgroupId) -> Option<&RoutingState> {
        self.routes.get(subgroup)
    }

    pub fn routes(&self) -> impl Iterator<Item = (&SubgroupId, &RoutingState)> {
        self.routes.iter()
    }

    /// Starts routing for `subgroup`; its starvation clock starts at `now`.
    pub fn add_subgroup(&mut self, subgroup: SubgroupId, now: Millis) {
        let window = self.params.profile_window;
        self.routes.entry(subgroup).or_insert_with(|| RoutingState {
            last_delivery_at: now,
            content_profile: ContentProfile::new(window),
            received_insight_ids: BTreeSet::new(),
        });
    }

    /// Feeds a message posted in `subgroup` into its content profile.
    pub fn observe(&mut self, subgroup: &SubgroupId, text: &str) -> Result<(), RoutingError> {
        self.routes
            .get_mut(subgroup)
            .ok_or_else(|| RoutingError::UnknownSubgroup(subgroup.clone()))?
            .content_profile
            .push(text);
        Ok(())
    }

    pub fn enqueue_insight(&mut self, insight: Insight) -> EnqueueOutcome {
        self.pool.enqueue(insight)
    }

    pub fn is_eligible(&self, subgroup: &SubgroupId, now: Millis) -> bool {
        self.routes.get(subgroup).is_some_and(|r| {
            now.saturating_sub(r.last_delivery_at) >= self.params.starvation_threshold
        })
    }

    fn reachable(&self, insight: &Insight, receiver: &SubgroupId) -> bool {
        match self.params.topology {
            Topology::FullyConnected => true,
            Topology::Ring => {
                let ring: Vec<&SubgroupId> = self.routes.keys().collect();
                let k = ring.len();
                let Some(pos) = ring.iter().position(|g| *g == receiver) else {
                    return false;
                };
                let left = ring[(pos + k - 1) % k];
                let right = ring[(pos + 1) % k];
                [left, right].into_iter().any(|n| {
                    n != receiver
                        && (n == &insight.source_subgroup || insight.delivered_to.contains(n))
                })
            }
        }
    }

    /// Every pooled insight `receiver` could be given right now, ignoring
    /// its starvation clock.
    pub fn candidates(&self, receiver: &SubgroupId) -> Result<Vec<Candidate<'_>>, RoutingError> {
        let route = self
            .routes
            .get(receiver)
            .ok_or_else(|| RoutingError::UnknownSubgroup(receiver.clone()))?;
        let profile = route.content_profile.bag();
        Ok(self
            .pool
            .entries
            .iter()
            .filter(|e| &e.insight.source_subgroup != receiver)
            .filter(|e| !route.received_insight_ids.contains(&e.insight.insight_id))
            .filter(|e| self.reachable(&e.insight, receiver))
            .map(|e| Candidate {
                insight: &e.insight,
                novelty: self.scorer.score(&e.tokens, profile),
            })
            .filter(|c| c.novelty >= self.params.novelty_floor)
            .collect())
    }

    /// The most novel qualifying insight for an eligible `receiver`. Ties go
    /// to the older insight, then the smaller id.
    pub fn select_delivery(
        &self,
        receiver: &SubgroupId,
        now: Millis,
    ) -> Result<Option<Candidate<'_>>, RoutingError> {
        let route = self
            .routes
            .get(receiver)
            .ok_or_else(|| RoutingError::UnknownSubgroup(receiver.clone()))?;
        if !self.is_eligible(receiver, now) {
            return Err(RoutingError::NotEligible {
                subgroup: receiver.clone(),
                eligible_at: route.last_delivery_at + self.params.starvation_threshold,
                now,
            });
        }
        Ok(self.candidates(receiver)?.into_iter().reduce(|best, c| {
            let better = c.novelty > best.novelty
                || (c.novelty == best.novelty
                    && (c.insight.created_at, &c.insight.insight_id)
                        < (best.insight.created_at, &best.insight.insight_id));
            if better {
                c
            } else {
                best
            }
        }))
    }

    /// Subgroups in service order: least recently served first, then by id.
    pub fn service_order(&self) -> Vec<SubgroupId> {
        let mut order: Vec<(&SubgroupId, Millis)> = self
            .routes
            .iter()
            .map(|(g, r)| (g, r.last_delivery_at))
            .collect();
        order.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        order.into_iter().map(|(g, _)| g.clone()).collect()
    }

    /// Deliveries a tick at `now` would make, without applying them.
    ///
    /// Receivers never interact within one tick: an insight picked for one
    /// subgroup stays available for the next.
    pub fn plan_tick(&self, now: Millis) -> Vec<Delivery> {
        self.service_order()
            .into_iter()
            .filter(|g| self.is_eligible(g, now))
            .filter_map(|g| {
                let c = self.select_delivery(&g, now).ok().flatten()?;
                Some(Delivery {
                    insight_id: c.insight.insight_id.clone(),
                    novelty: c.novelty,
                    receiver: g,
                })
            })
            .collect()
    }

    /// Plans and applies one tick.
    pub fn tick(&mut self, now: Millis) -> Vec<Delivery> {
        self.prune_propagated();
        let plan = self.plan_tick(now);
        for d in &plan {
            self.record_delivery(&d.insight_id, &d.receiver, now)
                .expect("planned delivery is valid");
        }
        plan
    }

    /// Applies one delivery. The receiver's clock never moves backwards.
    pub fn record_delivery(
        &mut self,
        insight_id: &InsightId,
        receiver: &SubgroupId,
        now: Millis,
    ) -> Result<(), RoutingError> {
        let entry = self
            .pool
            .entry_mut(insight_id)
            .ok_or_else(|| RoutingError::UnknownInsight(insight_id.clone()))?;
        if &entry.insight.source_subgroup == receiver {
            return Err(RoutingError::SelfDelivery(insight_id.clone()));
        }
        let route = self
            .routes
            .get_mut(receiver)
            .ok_or_else(|| RoutingError::UnknownSubgroup(receiver.clone()))?;
        if !route.received_insight_ids.insert(insight_id.clone()) {
            return Err(RoutingError::DuplicateDelivery {
                insight: insight_id.clone(),
                subgroup: receiver.clone(),
            });
        }
        route.last_delivery_at = route.last_delivery_at.max(now);
        entry.insight.delivered_to.insert(receiver.clone());
        self.prune_propagated();
        Ok(())
    }

    /// Drops insights that every other subgroup has received.
    pub fn prune_propagated(&mut self) -> Vec<InsightId> {
        let all: BTreeSet<&SubgroupId> = self.routes.keys().collect();
        self.pool.retain(|i| {
            all.iter()
                .any(|g| **g != i.source_subgroup && !i.delivered_to.contains(*g))
        })
    }
}
