//! Domain vocabulary shared by every part of the engine. These are also the
//! values carried in the event log.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Milliseconds since session start on the server clock.
pub type Millis = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(SessionId);
string_id!(ParticipantId);
string_id!(SubgroupId);
string_id!(SurrogateId);
string_id!(MessageId);
string_id!(InsightId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Many small subgroups joined by relay surrogates.
    Csi,
    /// Control condition: one room holding everybody, no surrogates.
    SingleRoom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillerBackend {
    #[default]
    StubExtractive,
    ExternalLlm,
}

/// Which subgroups may hand an insight to which.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Any subgroup may receive from any other.
    #[default]
    FullyConnected,
    /// Subgroups sit on a ring ordered by id; an insight only moves to ring
    /// neighbours of subgroups that already hold it. Simulator baseline.
    Ring,
}

/// Completion endpoint used by the `external_llm` distiller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpoint {
    pub url: String,
    pub model: String,
    #[serde(default = "defaults::llm_timeout")]
    pub timeout: u64,
}

mod defaults {
    pub fn duration() -> u64 {
        720
    }
    pub fn tick_interval() -> u64 {
        5
    }
    pub fn starvation_threshold() -> u64 {
        45
    }
    pub fn novelty_floor() -> f64 {
        0.3
    }
    pub fn dedup_floor() -> f64 {
        0.2
    }
    pub fn pool_max() -> usize {
        64
    }
    pub fn profile_window() -> usize {
        30
    }
    pub fn distill_every_messages() -> usize {
        6
    }
    pub fn distill_every_seconds() -> u64 {
        60
    }
    pub fn min_tokens() -> usize {
        5
    }
    pub fn merge_threshold() -> f64 {
        0.5
    }
    pub fn impact_window() -> u64 {
        120
    }
    pub fn llm_timeout() -> u64 {
        10
    }
}

/// Everything needed to run one session. All durations are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: SessionId,
    pub mode: Mode,
    pub target_subgroup_size: u32,
    #[serde(default)]
    pub task_prompt: String,
    #[serde(default = "defaults::duration")]
    pub duration: u64,
    #[serde(default = "defaults::tick_interval")]
    pub tick_interval: u64,
    #[serde(default = "defaults::starvation_threshold")]
    pub starvation_threshold: u64,
    #[serde(default = "defaults::novelty_floor")]
    pub novelty_floor: f64,
    #[serde(default)]
    pub distiller_backend: DistillerBackend,
    #[serde(default)]
    pub random_seed: u64,

    /// Near-duplicate floor for the insight pool.
    #[serde(default = "defaults::dedup_floor")]
    pub dedup_floor: f64,
    #[serde(default = "defaults::pool_max")]
    pub pool_max: usize,
    /// Messages per subgroup kept in the routing content profile.
    #[serde(default = "defaults::profile_window")]
    pub profile_window: usize,
    #[serde(default = "defaults::distill_every_messages")]
    pub distill_every_messages: usize,
    #[serde(default = "defaults::distill_every_seconds")]
    pub distill_every_seconds: u64,
    /// Content-token floor for distillation and for idea assertions.
    #[serde(default = "defaults::min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "defaults::merge_threshold")]
    pub merge_threshold: f64,
    #[serde(default = "defaults::impact_window")]
    pub impact_window: u64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmEndpoint>,
}

impl SessionConfig {
    /// A swarm-mode config with every tunable at its default.
    pub fn csi(session_id: impl Into<String>, target_subgroup_size: u32) -> Self {
        Self {
            session_id: SessionId::new(session_id),
            mode: Mode::Csi,
            target_subgroup_size,
            task_prompt: String::new(),
            duration: defaults::duration(),
            tick_interval: defaults::tick_interval(),
            starvation_threshold: defaults::starvation_threshold(),
            novelty_floor: defaults::novelty_floor(),
            distiller_backend: DistillerBackend::StubExtractive,
            random_seed: 0,
            dedup_floor: defaults::dedup_floor(),
            pool_max: defaults::pool_max(),
            profile_window: defaults::profile_window(),
            distill_every_messages: defaults::distill_every_messages(),
            distill_every_seconds: defaults::distill_every_seconds(),
            min_tokens: defaults::min_tokens(),
            merge_threshold: defaults::merge_threshold(),
            impact_window: defaults::impact_window(),
            topology: Topology::FullyConnected,
            llm: None,
        }
    }

    pub fn single_room(session_id: impl Into<String>) -> Self {
        Self {
            mode: Mode::SingleRoom,
            ..Self::csi(session_id, 5)
        }
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.task_prompt = prompt.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.random_seed = seed;
        self
    }

    pub fn duration_ms(&self) -> Millis {
        self.duration * 1000
    }

    pub fn tick_interval_ms(&self) -> Millis {
        self.tick_interval * 1000
    }

    pub fn starvation_threshold_ms(&self) -> Millis {
        self.starvation_threshold * 1000
    }
}

/// One violated config invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_owned(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every invariant `config` violates. An empty list means the config is valid.
pub fn validate_config(config: &SessionConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.mode == Mode::Csi {
        if config.target_subgroup_size < 4 {
            out.push(Violation::new("target_subgroup_size", "size below 4"));
        }
        if config.target_subgroup_size > 7 {
            out.push(Violation::new("target_subgroup_size", "size above 7"));
        }
    }
    if config.duration == 0 {
        out.push(Violation::new("duration", "requires duration > 0"));
    }
    if config.tick_interval == 0 {
        out.push(Violation::new(
            "tick_interval",
            "requires tick_interval > 0",
        ));
    }
    if config.starvation_threshold < config.tick_interval {
        out.push(Violation::new(
            "starvation_threshold",
            "requires starvation_threshold >= tick_interval",
        ));
    }
    for (field, v) in [
        ("novelty_floor", config.novelty_floor),
        ("dedup_floor", config.dedup_floor),
        ("merge_threshold", config.merge_threshold),
    ] {
        if !(0.0..=1.0).contains(&v) {
            out.push(Violation::new(field, "must lie in [0, 1]"));
        }
    }
    if config.pool_max == 0 {
        out.push(Violation::new("pool_max", "requires pool_max > 0"));
    }
    if config.profile_window == 0 {
        out.push(Violation::new(
            "profile_window",
            "requires profile_window > 0",
        ));
    }
    if config.distill_every_messages == 0 {
        out.push(Violation::new(
            "distill_every_messages",
            "requires distill_every_messages > 0",
        ));
    }
    if config.distiller_backend == DistillerBackend::ExternalLlm && config.llm.is_none() {
        out.push(Violation::new(
            "llm",
            "external_llm backend needs an llm endpoint",
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: ParticipantId,
    pub display_name: String,
    pub subgroup_id: Option<SubgroupId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub subgroup_id: SubgroupId,
    pub member_ids: BTreeSet<ParticipantId>,
    /// Absent in single-room mode.
    pub surrogate_id: Option<SurrogateId>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Author {
    Human(ParticipantId),
    Surrogate(SurrogateId),
}

impl Author {
    pub fn is_human(&self) -> bool {
        matches!(self, Author::Human(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Relayed(InsightId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub message_id: MessageId,
    pub subgroup_id: SubgroupId,
    pub author: Author,
    pub timestamp: Millis,
    pub text: String,
    pub provenance: Provenance,
}

impl ChatMessage {
    pub fn human(
        message_id: MessageId,
        subgroup_id: SubgroupId,
        author: ParticipantId,
        timestamp: Millis,
        text: impl Into<String>,
    ) -> Self {
        Self {
            message_id,
            subgroup_id,
            author: Author::Human(author),
            timestamp,
            text: text.into(),
            provenance: Provenance::Original,
        }
    }

    pub fn relayed(
        message_id: MessageId,
        subgroup_id: SubgroupId,
        author: SurrogateId,
        timestamp: Millis,
        text: impl Into<String>,
        insight: InsightId,
    ) -> Self {
        Self {
            message_id,
            subgroup_id,
            author: Author::Surrogate(author),
            timestamp,
            text: text.into(),
            provenance: Provenance::Relayed(insight),
        }
    }

    /// Human messages are original, surrogate messages are relays.
    pub fn provenance_consistent(&self) -> bool {
        matches!(
            (&self.author, &self.provenance),
            (Author::Human(_), Provenance::Original)
                | (Author::Surrogate(_), Provenance::Relayed(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insight {
    pub insight_id: InsightId,
    pub source_subgroup: SubgroupId,
    pub text: String,
    pub source_message_ids: Vec<MessageId>,
    pub created_at: Millis,
    #[serde(default)]
    pub delivered_to: BTreeSet<SubgroupId>,
}

/// Why a session stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    DurationElapsed,
    Manual,
}

/// One record of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub sequence_no: u64,
    pub wall_time: Millis,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    SessionStarted {
        config: SessionConfig,
        subgroups: Vec<Subgroup>,
    },
    ParticipantJoined {
        participant: Participant,
    },
    /// Late joiners queued until enough arrived to open a fresh subgroup.
    SubgroupOpened {
        subgroup: Subgroup,
    },
    MessagePosted {
        message: ChatMessage,
    },
    InsightCreated {
        insight: Insight,
    },
    InsightDelivered {
        insight_id: InsightId,
        receiver: SubgroupId,
    },
    SessionEnded {
        reason: EndReason,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::SessionStarted { .. } => "session_started",
            EventPayload::ParticipantJoined { .. } => "participant_joined",
            EventPayload::SubgroupOpened { .. } => "subgroup_opened",
            EventPayload::MessagePosted { .. } => "message_posted",
            EventPayload::InsightCreated { .. } => "insight_created",
            EventPayload::InsightDelivered { .. } => "insight_delivered",
            EventPayload::SessionEnded { .. } => "session_ended",
        }
    }
}
