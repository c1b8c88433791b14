//! Post-session metrics and the forensic report. Everything here is a pure
//! function of the event log, so a replayed log reports identically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{
    EndReason, EventPayload, InsightId, Millis, Mode, ParticipantId, SessionConfig, SessionEvent,
    SubgroupId,
};
use crate::taxonomy::{impact, IdeaId, IdeaIndex, Mention, TaxonomyParams};

/// One delivery of an insight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub receiver: SubgroupId,
    pub delivered_at: Millis,
    /// Time since the insight was created.
    pub latency: Millis,
}

/// How far and how fast one insight spread.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightPropagation {
    pub insight_id: InsightId,
    pub source_subgroup: SubgroupId,
    pub created_at: Millis,
    pub deliveries: Vec<DeliveryRecord>,
    /// Distinct receiving subgroups.
    pub coverage: usize,
    /// Subgroups other than the source that existed when the log ended.
    pub eligible: usize,
    /// Latency of the delivery that completed coverage, if it did.
    pub full_coverage_latency: Option<Millis>,
}

impl InsightPropagation {
    /// Latency of the `k`-th delivery (1-based).
    pub fn time_to_kth(&self, k: usize) -> Option<Millis> {
        k.checked_sub(1)
            .and_then(|i| self.deliveries.get(i))
            .map(|d| d.latency)
    }
}

fn subgroups_in(log: &[SessionEvent]) -> BTreeSet<SubgroupId> {
    log.iter()
        .flat_map(|e| match &e.payload {
            EventPayload::SessionStarted { subgroups, .. } => {
                subgroups.iter().map(|g| g.subgroup_id.clone()).collect()
            }
            EventPayload::SubgroupOpened { subgroup } => vec![subgroup.subgroup_id.clone()],
            _ => Vec::new(),
        })
        .collect()
}

/// Per-insight coverage and latency, in creation order.
pub fn propagation_metrics(log: &[SessionEvent]) -> Vec<InsightPropagation> {
    let groups = subgroups_in(log);
    let mut out: Vec<InsightPropagation> = Vec::new();
    let mut index: BTreeMap<InsightId, usize> = BTreeMap::new();
    for e in log {
        match &e.payload {
            EventPayload::InsightCreated { insight } => {
                index.insert(insight.insight_id.clone(), out.len());
                out.push(InsightPropagation {
                    insight_id: insight.insight_id.clone(),
                    source_subgroup: insight.source_subgroup.clone(),
                    created_at: insight.created_at,
                    deliveries: Vec::new(),
                    coverage: 0,
                    eligible: groups
                        .iter()
                        .filter(|g| **g != insight.source_subgroup)
                        .count(),
                    full_coverage_latency: None,
                });
            }
            EventPayload::InsightDelivered {
                insight_id,
                receiver,
            } => {
                let Some(&i) = index.get(insight_id) else {
                    continue;
                };
                let p = &mut out[i];
                if p.deliveries.iter().any(|d| &d.receiver == receiver) {
                    continue;
                }
                p.deliveries.push(DeliveryRecord {
                    receiver: receiver.clone(),
                    delivered_at: e.wall_time,
                    latency: e.wall_time.saturating_sub(p.created_at),
                });
                p.coverage = p.deliveries.len();
            }
            _ => {}
        }
    }
    for p in &mut out {
        if p.eligible > 0 && p.coverage >= p.eligible {
            p.full_coverage_latency = p.time_to_kth(p.eligible);
        }
    }
    out
}

/// Message counts for every human participant, silent ones included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationMetrics {
    pub counts: BTreeMap<ParticipantId, usize>,
    /// Most minus least prolific participant.
    pub spread: usize,
    pub gini: f64,
}

/// Gini coefficient of non-negative counts; 0 for empty or all-zero input.
pub fn gini(values: &[usize]) -> f64 {
    let n = values.len();
    let total: usize = values.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (i + 1) as f64 * x as f64)
        .sum();
    let n = n as f64;
    (2.0 * weighted / (n * total as f64) - (n + 1.0) / n).max(0.0)
}

pub fn participation_metrics(log: &[SessionEvent]) -> ParticipationMetrics {
    let mut counts: BTreeMap<ParticipantId, usize> = BTreeMap::new();
    for e in log {
        match &e.payload {
            EventPayload::ParticipantJoined { participant } => {
                counts
                    .entry(participant.participant_id.clone())
                    .or_insert(0);
            }
            EventPayload::SessionStarted { subgroups, .. } => {
                for p in subgroups.iter().flat_map(|g| &g.member_ids) {
                    counts.entry(p.clone()).or_insert(0);
                }
            }
            EventPayload::MessagePosted { message } => {
                if let crate::model::Author::Human(p) = &message.author {
                    *counts.entry(p.clone()).or_insert(0) += 1;
                }
            }
            _ => {}
        }
    }
    let values: Vec<usize> = counts.values().copied().collect();
    let spread = match (values.iter().max(), values.iter().min()) {
        (Some(max), Some(min)) => max - min,
        _ => 0,
    };
    ParticipationMetrics {
        gini: gini(&values),
        spread,
        counts,
    }
}

/// The idea taxonomy rebuilt from a log with the session's own parameters.
pub fn rebuild_taxonomy(log: &[SessionEvent]) -> IdeaIndex {
    let params = log
        .iter()
        .find_map(|e| match &e.payload {
            EventPayload::SessionStarted { config, .. } => {
                Some(TaxonomyParams::from_config(config))
            }
            _ => None,
        })
        .unwrap_or_default();
    let mut index = IdeaIndex::new(params);
    for e in log {
        if let EventPayload::MessagePosted { message } = &e.payload {
            if message.author.is_human() {
                index.record_assertion(
                    &message.message_id,
                    &message.subgroup_id,
                    message.timestamp,
                    &message.text,
                );
            }
        }
    }
    index
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedIdea {
    pub rank: usize,
    pub idea_id: IdeaId,
    pub canonical_text: String,
    /// Number of subgroups that raised the idea.
    pub breadth: usize,
    pub support: usize,
    pub oppose: usize,
    pub neutral: usize,
    pub net_stance: i64,
    pub first_mentioned_at: Millis,
    pub timeline: Vec<Mention>,
}

/// One insight_delivered record, annotated with its follow-on discussion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationEdge {
    pub insight_id: InsightId,
    pub source: SubgroupId,
    pub receiver: SubgroupId,
    pub delivered_at: Millis,
    pub follow_on_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForensicReport {
    pub session_id: Option<String>,
    pub mode: Option<Mode>,
    pub subgroup_count: usize,
    pub ended: Option<EndReason>,
    pub last_event_at: Millis,
    pub message_count: usize,
    pub insight_count: usize,
    pub ideas: Vec<RankedIdea>,
    pub insights: Vec<InsightPropagation>,
    pub propagation: Vec<PropagationEdge>,
    pub participation: ParticipationMetrics,
}

/// Builds the report for a finished (or in-progress) session. An empty log
/// yields a valid empty report.
pub fn forensic_report(log: &[SessionEvent]) -> ForensicReport {
    let config: Option<&SessionConfig> = log.iter().find_map(|e| match &e.payload {
        EventPayload::SessionStarted { config, .. } => Some(config),
        _ => None,
    });
    let impact_window =
        config.map_or(SessionConfig::csi("", 5).impact_window, |c| c.impact_window) * 1000;

    let taxonomy = rebuild_taxonomy(log);
    let mut ideas: Vec<RankedIdea> = taxonomy
        .ideas()
        .iter()
        .map(|n| {
            let (support, oppose, neutral) = taxonomy.stance_counts(&n.idea_id);
            RankedIdea {
                rank: 0,
                idea_id: n.idea_id.clone(),
                canonical_text: n.canonical_text.clone(),
                breadth: n.subgroups_mentioning.len(),
                support,
                oppose,
                neutral,
                net_stance: support as i64 - oppose as i64,
                first_mentioned_at: n.mentions.first().map_or(0, |m| m.timestamp),
                timeline: n.mentions.clone(),
            }
        })
        .collect();
    ideas.sort_by(|a, b| {
        b.breadth
            .cmp(&a.breadth)
            .then(b.net_stance.cmp(&a.net_stance))
            .then(a.first_mentioned_at.cmp(&b.first_mentioned_at))
            .then(a.idea_id.cmp(&b.idea_id))
    });
    for (i, idea) in ideas.iter_mut().enumerate() {
        idea.rank = i + 1;
    }

    let insights = propagation_metrics(log);
    let sources: BTreeMap<&InsightId, &SubgroupId> = insights
        .iter()
        .map(|p| (&p.insight_id, &p.source_subgroup))
        .collect();
    let mut impacts: BTreeMap<(InsightId, SubgroupId), usize> = BTreeMap::new();
    for p in &insights {
        for r in impact(&p.insight_id, log, impact_window) {
            impacts.insert((r.insight_id, r.receiving_subgroup), r.follow_on_count);
        }
    }
    let propagation = log
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::InsightDelivered {
                insight_id,
                receiver,
            } => Some(PropagationEdge {
                insight_id: insight_id.clone(),
                source: sources
                    .get(insight_id)
                    .map_or_else(|| SubgroupId::new("?"), |s| SubgroupId::clone(s)),
                receiver: receiver.clone(),
                delivered_at: e.wall_time,
                follow_on_count: impacts
                    .get(&(insight_id.clone(), receiver.clone()))
                    .copied()
                    .unwrap_or(0),
            }),
            _ => None,
        })
        .collect();

    ForensicReport {
        session_id: config.map(|c| c.session_id.to_string()),
        mode: config.map(|c| c.mode),
        subgroup_count: subgroups_in(log).len(),
        ended: log.iter().find_map(|e| match &e.payload {
            EventPayload::SessionEnded { reason } => Some(*reason),
            _ => None,
        }),
        last_event_at: log.last().map_or(0, |e| e.wall_time),
        message_count: log
            .iter()
            .filter(|e| matches!(e.payload, EventPayload::MessagePosted { .. }))
            .count(),
        insight_count: insights.len(),
        ideas,
        insights,
        propagation,
        participation: participation_metrics(log),
    }
}

/// Outcome of checking that surrogates only relay human words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayAudit {
    pub surrogate_messages: usize,
    /// Messages whose chain checked out completely.
    pub pure: usize,
    /// One line per failed check.
    pub violations: Vec<String>,
}

impl RelayAudit {
    pub fn all_pure(&self) -> bool {
        self.violations.is_empty() && self.pure == self.surrogate_messages
    }
}

/// Checks every surrogate message in `log`. Each must be a known framing
/// phrase followed by the text of an insight that was delivered to that
/// subgroup, and the insight text must be copied verbatim from a human
/// message of its source subgroup that the insight cites.
pub fn audit_relays(log: &[SessionEvent]) -> RelayAudit {
    use crate::model::{Author, Provenance};
    use crate::surrogate::framings;

    let mut audit = RelayAudit::default();
    let mut messages = BTreeMap::new();
    let mut insights = BTreeMap::new();
    let mut delivered = BTreeSet::new();
    let mut surrogate_of = BTreeMap::new();
    for e in log {
        match &e.payload {
            EventPayload::SessionStarted { subgroups, .. } => {
                for g in subgroups {
                    surrogate_of.insert(g.subgroup_id.clone(), g.surrogate_id.clone());
                }
            }
            EventPayload::SubgroupOpened { subgroup } => {
                surrogate_of.insert(subgroup.subgroup_id.clone(), subgroup.surrogate_id.clone());
            }
            EventPayload::InsightCreated { insight } => {
                insights.insert(insight.insight_id.clone(), insight.clone());
            }
            EventPayload::InsightDelivered {
                insight_id,
                receiver,
            } => {
                delivered.insert((insight_id.clone(), receiver.clone()));
            }
            EventPayload::MessagePosted { message } => {
                messages.insert(message.message_id.clone(), message.clone());
                let Author::Surrogate(sid) = &message.author else {
                    continue;
                };
                audit.surrogate_messages += 1;
                let fail = |why: String| format!("{}: {why}", message.message_id);
                let Provenance::Relayed(iid) = &message.provenance else {
                    audit
                        .violations
                        .push(fail("surrogate message without relay provenance".into()));
                    continue;
                };
                if surrogate_of.get(&message.subgroup_id) != Some(&Some(sid.clone())) {
                    audit.violations.push(fail(format!(
                        "{sid} does not serve {}",
                        message.subgroup_id
                    )));
                    continue;
                }
                let Some(insight) = insights.get(iid) else {
                    audit
                        .violations
                        .push(fail(format!("unknown insight {iid}")));
                    continue;
                };
                if !delivered.contains(&(iid.clone(), message.subgroup_id.clone())) {
                    audit
                        .violations
                        .push(fail(format!("{iid} was never delivered here")));
                    continue;
                }
                let framed = framings().iter().any(|f| {
                    message
                        .text
                        .strip_prefix(f)
                        .and_then(|rest| rest.strip_prefix(' '))
                        .is_some_and(|body| body == insight.text)
                });
                if !framed {
                    audit
                        .violations
                        .push(fail("text is not a framing phrase plus the insight".into()));
                    continue;
                }
                let sourced = !insight.source_message_ids.is_empty()
                    && insight.source_message_ids.iter().all(|id| {
                        messages.get(id).is_some_and(|m| {
                            m.author.is_human() && m.subgroup_id == insight.source_subgroup
                        })
                    })
                    && insight
                        .source_message_ids
                        .iter()
                        .any(|id| messages.get(id).is_some_and(|m| m.text == insight.text));
                if !sourced {
                    audit.violations.push(fail(format!(
                        "{iid} is not verbatim human text from its source"
                    )));
                    continue;
                }
                audit.pure += 1;
            }
            _ => {}
        }
    }
    audit
}

fn clock(ms: Millis) -> String {
    let s = ms / 1000;
    format!("{:02}:{:02}.{:03}", s / 60, s % 60, ms % 1000)
}

impl ForensicReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text rendering for terminals and files.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Session {} ({}), {} subgroups, {} messages, {} insights, ended: {}",
            self.session_id.as_deref().unwrap_or("-"),
            match self.mode {
                Some(Mode::Csi) => "csi",
                Some(Mode::SingleRoom) => "single_room",
                None => "-",
            },
            self.subgroup_count,
            self.message_count,
            self.insight_count,
            match self.ended {
                Some(EndReason::DurationElapsed) => "duration elapsed",
                Some(EndReason::Manual) => "manual",
                None => "no",
            },
        );

        let _ = writeln!(out, "\nIdeas by breadth of support");
        if self.ideas.is_empty() {
            let _ = writeln!(out, "  (none)");
        }
        for idea in &self.ideas {
            let _ = writeln!(
                out,
                "{:>4}. [{}] breadth {} net {:+} (support {}, oppose {}, neutral {}) \"{}\"",
                idea.rank,
                idea.idea_id,
                idea.breadth,
                idea.net_stance,
                idea.support,
                idea.oppose,
                idea.neutral,
                idea.canonical_text
            );
            let line: Vec<String> = idea
                .timeline
                .iter()
                .map(|m| format!("{} {} {}", clock(m.timestamp), m.subgroup_id, m.message_id))
                .collect();
            let _ = writeln!(out, "      mentions: {}", line.join(", "));
        }

        let _ = writeln!(out, "\nInsight propagation");
        if self.insights.is_empty() {
            let _ = writeln!(out, "  (none)");
        }
        for p in &self.insights {
            let _ = writeln!(
                out,
                "  {} from {} at {}: reached {}/{}{}",
                p.insight_id,
                p.source_subgroup,
                clock(p.created_at),
                p.coverage,
                p.eligible,
                p.full_coverage_latency.map_or(String::new(), |l| format!(
                    ", full coverage after {}",
                    clock(l)
                )),
            );
            for e in self
                .propagation
                .iter()
                .filter(|e| e.insight_id == p.insight_id)
            {
                let _ = writeln!(
                    out,
                    "      -> {} at {} (follow-on {})",
                    e.receiver,
                    clock(e.delivered_at),
                    e.follow_on_count
                );
            }
        }

        let _ = writeln!(
            out,
            "\nParticipation: spread {}, Gini {:.4}",
            self.participation.spread, self.participation.gini
        );
        for (p, n) in &self.participation.counts {
            let _ = writeln!(out, "  {p} {n}");
        }
        out
    }
}
