//! Real-time idea taxonomy: every substantive human message is filed under
//! an idea, with a support/oppose/neutral stance, as it arrives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::model::{
    EventPayload, InsightId, MessageId, Millis, SessionConfig, SessionEvent, SubgroupId,
};
use crate::text::{jaccard_sets, parse_list, token_set, tokenize};

const SUPPORT_TXT: &str = include_str!("../data/support.txt");
const OPPOSE_TXT: &str = include_str!("../data/oppose.txt");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdeaId(pub String);

impl fmt::Display for IdeaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    Support,
    Oppose,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceLink {
    pub message_id: MessageId,
    pub idea_id: IdeaId,
    pub stance: Stance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub message_id: MessageId,
    pub subgroup_id: SubgroupId,
    pub timestamp: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeaNode {
    pub idea_id: IdeaId,
    pub canonical_tokens: BTreeSet<String>,
    pub canonical_text: String,
    pub first_message_id: MessageId,
    pub mention_message_ids: Vec<MessageId>,
    pub subgroups_mentioning: BTreeSet<SubgroupId>,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    Created(IdeaId),
    Joined(IdeaId),
    /// A short reaction attached to the idea most recently raised in the
    /// same subgroup.
    Reaction(IdeaId),
    Ignored,
}

fn lexicon(src: &'static str) -> Vec<Vec<String>> {
    parse_list(src).map(words).collect()
}

fn support_markers() -> &'static [Vec<String>] {
    static L: OnceLock<Vec<Vec<String>>> = OnceLock::new();
    L.get_or_init(|| lexicon(SUPPORT_TXT))
}

fn oppose_markers() -> &'static [Vec<String>] {
    static L: OnceLock<Vec<Vec<String>>> = OnceLock::new();
    L.get_or_init(|| lexicon(OPPOSE_TXT))
}

/// Lowercased words, keeping apostrophes and `+` so that markers like
/// `won't` and `+1` survive.
fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace('\u{2019}', "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '+'))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

fn has_marker(words: &[String], markers: &[Vec<String>]) -> bool {
    markers
        .iter()
        .any(|m| !m.is_empty() && words.windows(m.len()).any(|w| w == m.as_slice()))
}

/// Lexicon stance: any oppose marker wins, then any support marker.
pub fn classify_stance(text: &str) -> Stance {
    let w = words(text);
    if has_marker(&w, oppose_markers()) {
        Stance::Oppose
    } else if has_marker(&w, support_markers()) {
        Stance::Support
    } else {
        Stance::Neutral
    }
}

/// Swappable stance classification (e.g. a model-backed one).
pub trait StanceClassifier {
    fn classify(&self, text: &str, idea: &IdeaNode) -> Stance;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexiconStance;

impl StanceClassifier for LexiconStance {
    fn classify(&self, text: &str, _idea: &IdeaNode) -> Stance {
        classify_stance(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyParams {
    pub min_tokens: usize,
    pub merge_threshold: f64,
    /// How long after an idea is raised a short reaction still attaches to it.
    pub thread_window: Millis,
}

impl TaxonomyParams {
    pub fn from_config(config: &SessionConfig) -> Self {
        Self {
            min_tokens: config.min_tokens,
            merge_threshold: config.merge_threshold,
            thread_window: config.impact_window * 1000,
        }
    }
}

impl Default for TaxonomyParams {
    fn default() -> Self {
        Self::from_config(&SessionConfig::csi("default", 5))
    }
}

/// Greedy incremental clustering of assertions into ideas.
#[derive(Debug, Clone, PartialEq)]
pub struct IdeaIndex<C = LexiconStance> {
    params: TaxonomyParams,
    nodes: Vec<IdeaNode>,
    links: BTreeMap<(MessageId, IdeaId), Stance>,
    last_raised: BTreeMap<SubgroupId, (usize, Millis)>,
    classifier: C,
}

impl IdeaIndex<LexiconStance> {
    pub fn new(params: TaxonomyParams) -> Self {
        Self::with_classifier(params, LexiconStance)
    }
}

impl<C: StanceClassifier> IdeaIndex<C> {
    pub fn with_classifier(params: TaxonomyParams, classifier: C) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            links: BTreeMap::new(),
            last_raised: BTreeMap::new(),
            classifier,
        }
    }

    pub fn ideas(&self) -> &[IdeaNode] {
        &self.nodes
    }

    pub fn idea(&self, id: &IdeaId) -> Option<&IdeaNode> {
        self.nodes.iter().find(|n| &n.idea_id == id)
    }

    pub fn stance_links(&self) -> impl Iterator<Item = StanceLink> + '_ {
        self.links.iter().map(|((m, i), s)| StanceLink {
            message_id: m.clone(),
            idea_id: i.clone(),
            stance: *s,
        })
    }

    /// Support, oppose and neutral link counts for an idea.
    pub fn stance_counts(&self, id: &IdeaId) -> (usize, usize, usize) {
        self.links
            .iter()
            .filter(|((_, i), _)| i == id)
            .fold((0, 0, 0), |(s, o, n), (_, st)| match st {
                Stance::Support => (s + 1, o, n),
                Stance::Oppose => (s, o + 1, n),
                Stance::Neutral => (s, o, n + 1),
            })
    }

    /// Files a human message. Substantive messages join the most similar
    /// idea at or above the merge threshold (earliest on ties) or start a
    /// new one; short messages carrying a stance marker attach to the idea
    /// last raised in their subgroup, if it is recent enough.
    pub fn record_assertion(
        &mut self,
        message_id: &MessageId,
        subgroup: &SubgroupId,
        timestamp: Millis,
        text: &str,
    ) -> Assertion {
        let tokens = tokenize(text);
        if tokens.len() < self.params.min_tokens {
            return self.record_reaction(message_id, subgroup, timestamp, text);
        }
        let set: BTreeSet<String> = tokens.into_iter().collect();
        let best = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, jaccard_sets(&set, &n.canonical_tokens)))
            .fold(None::<(usize, f64)>, |best, (i, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((i, s)),
            });
        let mention = Mention {
            message_id: message_id.clone(),
            subgroup_id: subgroup.clone(),
            timestamp,
        };
        let (idx, outcome) = match best {
            Some((i, s)) if s >= self.params.merge_threshold => {
                let node = &mut self.nodes[i];
                node.mention_message_ids.push(message_id.clone());
                node.subgroups_mentioning.insert(subgroup.clone());
                node.mentions.push(mention);
                (i, Assertion::Joined(node.idea_id.clone()))
            }
            _ => {
                let id = IdeaId(format!("idea-{:04}", self.nodes.len() + 1));
                self.nodes.push(IdeaNode {
                    idea_id: id.clone(),
                    canonical_tokens: set,
                    canonical_text: text.to_owned(),
                    first_message_id: message_id.clone(),
                    mention_message_ids: vec![message_id.clone()],
                    subgroups_mentioning: BTreeSet::from([subgroup.clone()]),
                    mentions: vec![mention],
                });
                (self.nodes.len() - 1, Assertion::Created(id))
            }
        };
        let stance = self.classifier.classify(text, &self.nodes[idx]);
        self.links.insert(
            (message_id.clone(), self.nodes[idx].idea_id.clone()),
            stance,
        );
        self.last_raised.insert(subgroup.clone(), (idx, timestamp));
        outcome
    }

    fn record_reaction(
        &mut self,
        message_id: &MessageId,
        subgroup: &SubgroupId,
        timestamp: Millis,
        text: &str,
    ) -> Assertion {
        let Some(&(idx, at)) = self.last_raised.get(subgroup) else {
            return Assertion::Ignored;
        };
        if timestamp.saturating_sub(at) > self.params.thread_window {
            return Assertion::Ignored;
        }
        let node = &self.nodes[idx];
        match self.classifier.classify(text, node) {
            Stance::Neutral => Assertion::Ignored,
            stance => {
                let id = node.idea_id.clone();
                self.links.insert((message_id.clone(), id.clone()), stance);
                Assertion::Reaction(id)
            }
        }
    }

    /// Idea for a substantive message, if it was filed.
    pub fn idea_of(&self, message_id: &MessageId) -> Option<&IdeaNode> {
        self.nodes
            .iter()
            .find(|n| n.mention_message_ids.contains(message_id))
    }
}

/// Follow-on discussion an insight caused in one receiving subgroup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub insight_id: InsightId,
    pub receiving_subgroup: SubgroupId,
    pub delivered_at: Millis,
    pub follow_on_count: usize,
}

/// Minimum number of shared content tokens for a reply to count as follow-on.
pub const FOLLOW_ON_SHARED_TOKENS: usize = 2;

/// For each delivery of `insight_id`, the human messages in the receiving
/// subgroup logged after the delivery and within `window` of it that share
/// at least two content tokens with the insight.
pub fn impact(insight_id: &InsightId, log: &[SessionEvent], window: Millis) -> Vec<ImpactRecord> {
    let Some(text) = log.iter().find_map(|e| match &e.payload {
        EventPayload::InsightCreated { insight } if &insight.insight_id == insight_id => {
            Some(&insight.text)
        }
        _ => None,
    }) else {
        return Vec::new();
    };
    let insight_tokens = token_set(text);
    log.iter()
        .enumerate()
        .filter_map(|(pos, e)| match &e.payload {
            EventPayload::InsightDelivered {
                insight_id: id,
                receiver,
            } if id == insight_id => Some((pos, e.wall_time, receiver)),
            _ => None,
        })
        .map(|(pos, at, receiver)| {
            let follow_on_count = log[pos + 1..]
                .iter()
                .filter_map(|e| match &e.payload {
                    EventPayload::MessagePosted { message } => Some(message),
                    _ => None,
                })
                .filter(|m| &m.subgroup_id == receiver && m.author.is_human())
                .filter(|m| m.timestamp >= at && m.timestamp - at <= window)
                .filter(|m| {
                    crate::text::shared_tokens(&token_set(&m.text), &insight_tokens)
                        >= FOLLOW_ON_SHARED_TOKENS
                })
                .count();
            ImpactRecord {
                insight_id: insight_id.clone(),
                receiving_subgroup: receiver.clone(),
                delivered_at: at,
                follow_on_count,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index() -> IdeaIndex {
        IdeaIndex::new(TaxonomyParams::default())
    }

    #[test]
    fn stance_lexicon() {
        assert_eq!(
            classify_stance("great idea, cones as megaphones"),
            Stance::Support
        );
        assert_eq!(classify_stance("that won't work outdoors"), Stance::Oppose);
        assert_eq!(
            classify_stance("what about painting them?"),
            Stance::Neutral
        );
        assert_eq!(classify_stance("I disagree"), Stance::Oppose);
        assert_eq!(classify_stance("+1"), Stance::Support);
        assert_eq!(classify_stance("Yes!"), Stance::Support);
        // "no" is a whole-word marker, not a substring.
        assert_eq!(classify_stance("a nomad with cones"), Stance::Neutral);
    }

    #[test]
    fn first_message_creates_then_repeat_joins() {
        let mut idx = index();
        let text = "traffic cones as loud megaphones at outdoor concerts";
        let a = idx.record_assertion(&"m1".into(), &"g01".into(), 0, text);
        assert_eq!(a, Assertion::Created(IdeaId("idea-0001".into())));
        assert_eq!(idx.ideas()[0].mention_message_ids.len(), 1);
        let b = idx.record_assertion(&"m2".into(), &"g02".into(), 10, text);
        assert_eq!(b, Assertion::Joined(IdeaId("idea-0001".into())));
        let node = &idx.ideas()[0];
        assert_eq!(node.mention_message_ids.len(), 2);
        assert_eq!(node.subgroups_mentioning.len(), 2);
    }

    #[test]
    fn below_merge_threshold_splits() {
        let params = TaxonomyParams {
            min_tokens: 3,
            ..TaxonomyParams::default()
        };
        let mut idx = IdeaIndex::new(params);
        idx.record_assertion(&"m1".into(), &"g01".into(), 0, "alpha beta gamma delta");
        // |{alpha beta}| / |{alpha beta gamma delta epsilon}| = 2/5
        let probe = token_set("alpha beta epsilon");
        assert_eq!(jaccard_sets(&probe, &idx.ideas()[0].canonical_tokens), 0.4);
        let a = idx.record_assertion(&"m2".into(), &"g01".into(), 1, "alpha beta epsilon");
        assert_eq!(a, Assertion::Created(IdeaId("idea-0002".into())));
    }

    #[test]
    fn greetings_never_become_ideas() {
        let mut idx = index();
        assert_eq!(
            idx.record_assertion(&"m1".into(), &"g01".into(), 0, "hi all"),
            Assertion::Ignored
        );
        assert_eq!(
            idx.record_assertion(&"m2".into(), &"g01".into(), 0, "ok"),
            Assertion::Ignored
        );
        assert!(idx.ideas().is_empty());
    }

    #[test]
    fn reactions_attach_within_thread_window() {
        let mut idx = index();
        idx.record_assertion(
            &"m1".into(),
            &"g01".into(),
            0,
            "traffic cones as loud megaphones at outdoor concerts",
        );
        let id = IdeaId("idea-0001".into());
        assert_eq!(
            idx.record_assertion(&"m2".into(), &"g01".into(), 5_000, "yes love it"),
            Assertion::Reaction(id.clone())
        );
        assert_eq!(
            idx.record_assertion(&"m3".into(), &"g01".into(), 6_000, "bad idea"),
            Assertion::Reaction(id.clone())
        );
        assert_eq!(
            idx.record_assertion(&"m4".into(), &"g02".into(), 6_000, "+1"),
            Assertion::Ignored
        );
        assert_eq!(
            idx.record_assertion(&"m5".into(), &"g01".into(), 500_000, "+1"),
            Assertion::Ignored
        );
        assert_eq!(idx.stance_counts(&id), (1, 1, 1));
    }

    #[test]
    fn one_link_per_message_idea_pair() {
        let mut idx = index();
        let text = "great plan: traffic cones as loud megaphones at outdoor concerts";
        idx.record_assertion(&"m1".into(), &"g01".into(), 0, text);
        idx.record_assertion(&"m1".into(), &"g01".into(), 0, text);
        assert_eq!(idx.stance_links().count(), 1);
    }
}
