//! Per-subgroup relay agents.
//!
//! A surrogate watches its own subgroup, periodically distills one salient
//! human contribution into an [`Insight`] for the matchmaker, and voices
//! insights arriving from elsewhere behind a fixed framing phrase. It never
//! authors content of its own: the reference distiller copies a human
//! message verbatim.

use std::collections::{BTreeSet, VecDeque};
use std::sync::OnceLock;

use thiserror::Error;

use crate::model::{
    ChatMessage, DistillerBackend, Insight, MessageId, Millis, SessionConfig, SubgroupId,
    SurrogateId,
};
use crate::text::{jaccard_sets, parse_list, token_set, tokenize};

const FRAMINGS_TXT: &str = include_str!("../data/framings.txt");

/// Framing phrases used when rendering relayed insights.
pub fn framings() -> &'static [String] {
    static LIST: OnceLock<Vec<String>> = OnceLock::new();
    LIST.get_or_init(|| parse_list(FRAMINGS_TXT).map(str::to_owned).collect())
}

/// Splits a rendered relay into `(framing phrase, body)`.
pub fn strip_framing(text: &str) -> Option<(&'static str, &str)> {
    framings().iter().find_map(|f| {
        text.strip_prefix(f.as_str())
            .and_then(|rest| rest.strip_prefix(' '))
            .map(|body| (f.as_str(), body))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurrogateError {
    #[error("message {message} belongs to subgroup {got}, surrogate watches {expected}")]
    ForeignMessage {
        message: MessageId,
        expected: SubgroupId,
        got: SubgroupId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistillError {
    #[error("completion backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillerPolicy {
    pub backend: DistillerBackend,
    pub min_tokens: usize,
    /// Fire after this many human messages since the last distillation.
    pub every_messages: usize,
    /// Or after this long, if anything was said in between.
    pub every_interval: Millis,
    /// Candidates at least this similar to an idea the subgroup already
    /// relayed or received are skipped.
    pub known_idea_threshold: f64,
    pub buffer_capacity: usize,
}

impl DistillerPolicy {
    pub fn from_config(config: &SessionConfig) -> Self {
        Self {
            backend: config.distiller_backend,
            min_tokens: config.min_tokens,
            every_messages: config.distill_every_messages,
            every_interval: config.distill_every_seconds * 1000,
            known_idea_threshold: config.merge_threshold,
            buffer_capacity: config.profile_window,
        }
    }
}

impl Default for DistillerPolicy {
    fn default() -> Self {
        Self::from_config(&SessionConfig::csi("default", 5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    pub surrogate_id: SurrogateId,
    pub subgroup_id: SubgroupId,
    pub observation_buffer: VecDeque<ChatMessage>,
    pub covered_message_ids: BTreeSet<MessageId>,
    since_last: usize,
    last_distilled_at: Millis,
    known_ideas: Vec<BTreeSet<String>>,
    buffer_capacity: usize,
}

impl SurrogateState {
    pub fn new(
        surrogate_id: SurrogateId,
        subgroup_id: SubgroupId,
        policy: &DistillerPolicy,
        now: Millis,
    ) -> Self {
        Self {
            surrogate_id,
            subgroup_id,
            observation_buffer: VecDeque::new(),
            covered_message_ids: BTreeSet::new(),
            since_last: 0,
            last_distilled_at: now,
            known_ideas: Vec::new(),
            buffer_capacity: policy.buffer_capacity.max(1),
        }
    }

    /// Buffers human messages from this subgroup; relays are ignored so a
    /// surrogate never relays another surrogate's words.
    pub fn observe(&mut self, message: &ChatMessage) -> Result<(), SurrogateError> {
        if message.subgroup_id != self.subgroup_id {
            return Err(SurrogateError::ForeignMessage {
                message: message.message_id.clone(),
                expected: self.subgroup_id.clone(),
                got: message.subgroup_id.clone(),
            });
        }
        if !message.author.is_human() {
            return Ok(());
        }
        self.observation_buffer.push_back(message.clone());
        while self.observation_buffer.len() > self.buffer_capacity {
            self.observation_buffer.pop_front();
        }
        self.since_last += 1;
        Ok(())
    }

    /// Human messages seen since the last distillation.
    pub fn pending(&self) -> usize {
        self.since_last
    }

    pub fn trigger_due(&self, policy: &DistillerPolicy, now: Millis) -> bool {
        self.since_last >= policy.every_messages
            || (self.since_last > 0
                && now.saturating_sub(self.last_distilled_at) >= policy.every_interval)
    }

    /// Uncovered buffered messages that clear the salience floor and are not
    /// a restatement of an idea already known to this subgroup.
    pub fn candidates<'a>(
        &'a self,
        policy: &'a DistillerPolicy,
    ) -> impl Iterator<Item = (&'a ChatMessage, usize)> + 'a {
        self.observation_buffer
            .iter()
            .filter(|m| !self.covered_message_ids.contains(&m.message_id))
            .filter_map(move |m| {
                let tokens = tokenize(&m.text);
                if tokens.len() < policy.min_tokens {
                    return None;
                }
                let set: BTreeSet<String> = tokens.iter().cloned().collect();
                let known = self
                    .known_ideas
                    .iter()
                    .any(|k| jaccard_sets(&set, k) >= policy.known_idea_threshold);
                (!known).then_some((m, tokens.len()))
            })
    }

    /// Records an insight created from this subgroup.
    pub fn mark_distilled(&mut self, insight: &Insight) {
        self.covered_message_ids
            .extend(insight.source_message_ids.iter().cloned());
        let covered = &self.covered_message_ids;
        self.observation_buffer
            .retain(|m| !covered.contains(&m.message_id));
        self.since_last = 0;
        self.last_distilled_at = self.last_distilled_at.max(insight.created_at);
        self.known_ideas.push(token_set(&insight.text));
    }

    /// Records an insight relayed into this subgroup from elsewhere.
    pub fn note_received(&mut self, insight: &Insight) {
        self.known_ideas.push(token_set(&insight.text));
    }
}

/// What a distiller extracted: text plus the human messages it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distillation {
    pub text: String,
    pub source_message_ids: Vec<MessageId>,
}

pub trait Distiller: Send + Sync {
    fn distill(
        &self,
        state: &SurrogateState,
        policy: &DistillerPolicy,
    ) -> Result<Option<Distillation>, DistillError>;
}

/// Picks the single most salient uncovered message (most content tokens,
/// earliest on ties) and returns it verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveDistiller;

impl Distiller for ExtractiveDistiller {
    fn distill(
        &self,
        state: &SurrogateState,
        policy: &DistillerPolicy,
    ) -> Result<Option<Distillation>, DistillError> {
        let best = state
            .candidates(policy)
            .fold(None::<(&ChatMessage, usize)>, |best, (m, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((m, s)),
            });
        Ok(best.map(|(m, _)| Distillation {
            text: m.text.clone(),
            source_message_ids: vec![m.message_id.clone()],
        }))
    }
}

/// A plain-text completion service.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, DistillError>;
}

const PROMPT_HEADER: &str = "You relay ideas between small brainstorming groups that cannot see each other.\n\
Below are recent messages from one group. Write ONE sentence that distills the most salient idea,\n\
quoting the participants' own words where possible. Do not add ideas, opinions or facts of your own.\n";

/// The prompt sent to the completion backend for a set of messages.
pub fn distill_prompt(task_prompt: &str, messages: &[&ChatMessage]) -> String {
    let mut prompt = String::from(PROMPT_HEADER);
    if !task_prompt.is_empty() {
        prompt.push_str("\nTask: ");
        prompt.push_str(task_prompt);
        prompt.push('\n');
    }
    prompt.push_str("\nMessages:\n");
    for m in messages {
        prompt.push_str("- ");
        prompt.push_str(m.text.trim());
        prompt.push('\n');
    }
    prompt.push_str("\nDistilled sentence:");
    prompt
}

/// Summarizes every candidate message through an external completion
/// endpoint, retrying once on failure.
pub struct LlmDistiller<B> {
    backend: B,
    task_prompt: String,
}

impl<B: CompletionBackend> LlmDistiller<B> {
    pub fn new(backend: B, task_prompt: impl Into<String>) -> Self {
        Self {
            backend,
            task_prompt: task_prompt.into(),
        }
    }
}

impl<B: CompletionBackend> Distiller for LlmDistiller<B> {
    fn distill(
        &self,
        state: &SurrogateState,
        policy: &DistillerPolicy,
    ) -> Result<Option<Distillation>, DistillError> {
        let messages: Vec<&ChatMessage> = state.candidates(policy).map(|(m, _)| m).collect();
        if messages.is_empty() {
            return Ok(None);
        }
        let prompt = distill_prompt(&self.task_prompt, &messages);
        let text = match self.backend.complete(&prompt) {
            Ok(t) => t,
            Err(first) => {
                tracing::debug!(error = %first, "completion failed, retrying once");
                self.backend.complete(&prompt)?
            }
        };
        let text = text.trim();
        if text.is_empty() {
            return Ok(None);
        }
        Ok(Some(Distillation {
            text: text.to_owned(),
            source_message_ids: messages.iter().map(|m| m.message_id.clone()).collect(),
        }))
    }
}

/// Voices a delivered insight inside the receiving subgroup.
pub fn render_insight(
    insight: &Insight,
    surrogate_id: &SurrogateId,
    receiver: &SubgroupId,
    message_id: MessageId,
    now: Millis,
    template_seed: u64,
) -> ChatMessage {
    let list = framings();
    let framing = &list[(template_seed % list.len() as u64) as usize];
    ChatMessage::relayed(
        message_id,
        receiver.clone(),
        surrogate_id.clone(),
        now,
        format!("{framing} {}", insight.text),
        insight.insight_id.clone(),
    )
}
