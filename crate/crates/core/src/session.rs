//! Session lifecycle as an event-sourced state machine.
//!
//! Commands (`join`, `start`, `post_message`, `tick`, `end`) validate their
//! input, then emit [`SessionEvent`]s. Every state change happens in
//! [`SessionState::apply`], the same code path used by [`SessionState::replay`],
//! so a log always rebuilds the state that produced it. The engine is
//! clock-agnostic: callers pass the current session time in milliseconds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matchmaker::{Delivery, Matchmaker, RoutingError, RoutingParams};
use crate::model::{
    validate_config, Author, ChatMessage, EndReason, EventPayload, Insight, InsightId, MessageId,
    Millis, Mode, Participant, ParticipantId, Provenance, SessionConfig, SessionEvent, Subgroup,
    SubgroupId, SurrogateId, Violation,
};
use crate::partition::{self, LateJoin, PartitionError, MIN_SUBGROUP};
use crate::surrogate::{
    render_insight, strip_framing, Distiller, DistillerPolicy, ExtractiveDistiller, SurrogateError,
    SurrogateState,
};
use crate::taxonomy::{IdeaIndex, TaxonomyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    Running,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("invalid session config: {}", join_violations(.0))]
    InvalidConfig(Vec<Violation>),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("session is {actual:?}, operation needs {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("session has ended")]
    Ended,
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("participant {0} has no subgroup yet")]
    Unassigned(ParticipantId),
    #[error("message text is empty")]
    EmptyMessage,
    #[error("roster too small: {have} participants, need {need}")]
    RosterTooSmall { have: usize, need: usize },
    #[error("bad event #{seq}: {reason}")]
    InvalidEvent { seq: u64, reason: String },
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Something connected clients should be told about after a command.
#[derive(Debug, Clone, PartialEq)]
pub enum Notice {
    /// A message for everyone in `audience` (the author included, so clients
    /// can render their own posts in server order).
    Chat {
        audience: Vec<ParticipantId>,
        message: ChatMessage,
    },
    /// A participant's subgroup became known or changed.
    Assigned {
        participant: ParticipantId,
        subgroup: SubgroupId,
    },
    PhaseChanged(Phase),
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    pub participant_id: ParticipantId,
    /// `None` while in the lobby or queued for a new subgroup.
    pub subgroup_id: Option<SubgroupId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posted {
    pub message: ChatMessage,
    /// Everyone the message fans out to besides its author.
    pub recipients: Vec<ParticipantId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutcome {
    pub insights_created: Vec<InsightId>,
    pub deliveries: Vec<Delivery>,
    /// Distillation attempts that failed this tick (external backend only).
    pub degraded: usize,
    pub ended: bool,
}

/// Everything a session knows; equal logs give equal states.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    config: SessionConfig,
    phase: Phase,
    clock: Millis,
    started_at: Option<Millis>,
    participants: BTreeMap<ParticipantId, Participant>,
    lobby: Vec<ParticipantId>,
    subgroups: BTreeMap<SubgroupId, Subgroup>,
    late_queue: Vec<ParticipantId>,
    surrogates: BTreeMap<SubgroupId, SurrogateState>,
    matchmaker: Matchmaker,
    taxonomy: IdeaIndex,
    messages: Vec<ChatMessage>,
    message_index: BTreeMap<MessageId, usize>,
    insights: BTreeMap<InsightId, Insight>,
    end_reason: Option<EndReason>,
    log: Vec<SessionEvent>,
}

impl SessionState {
    fn new(config: SessionConfig) -> Self {
        Self {
            matchmaker: Matchmaker::new(RoutingParams::from_config(&config)),
            taxonomy: IdeaIndex::new(TaxonomyParams::from_config(&config)),
            config,
            phase: Phase::Lobby,
            clock: 0,
            started_at: None,
            participants: BTreeMap::new(),
            lobby: Vec::new(),
            subgroups: BTreeMap::new(),
            late_queue: Vec::new(),
            surrogates: BTreeMap::new(),
            messages: Vec::new(),
            message_index: BTreeMap::new(),
            insights: BTreeMap::new(),
            end_reason: None,
            log: Vec::new(),
        }
    }

    /// Rebuilds a session from its log. The first record must be
    /// `session_started`, which carries the config.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, SessionError> {
        let Some(first) = events.first() else {
            return Err(SessionError::InvalidEvent {
                seq: 0,
                reason: "empty log".into(),
            });
        };
        let EventPayload::SessionStarted { config, .. } = &first.payload else {
            return Err(SessionError::InvalidEvent {
                seq: first.sequence_no,
                reason: "log must begin with session_started".into(),
            });
        };
        let mut state = Self::new(config.clone());
        for ev in events {
            state.apply(ev.clone())?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    /// When the running phase must end: start time plus the configured
    /// duration. `None` before the session starts.
    pub fn deadline(&self) -> Option<Millis> {
        self.started_at.map(|t| t + self.config.duration_ms())
    }

    pub fn log(&self) -> &[SessionEvent] {
        &self.log
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn participant(&self, id: &ParticipantId) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn subgroups(&self) -> impl Iterator<Item = &Subgroup> {
        self.subgroups.values()
    }

    pub fn subgroup(&self, id: &SubgroupId) -> Option<&Subgroup> {
        self.subgroups.get(id)
    }

    pub fn surrogate(&self, subgroup: &SubgroupId) -> Option<&SurrogateState> {
        self.surrogates.get(subgroup)
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn message(&self, id: &MessageId) -> Option<&ChatMessage> {
        self.message_index.get(id).map(|&i| &self.messages[i])
    }

    pub fn insights(&self) -> impl Iterator<Item = &Insight> {
        self.insights.values()
    }

    pub fn insight(&self, id: &InsightId) -> Option<&Insight> {
        self.insights.get(id)
    }

    pub fn matchmaker(&self) -> &Matchmaker {
        &self.matchmaker
    }

    pub fn taxonomy(&self) -> &IdeaIndex {
        &self.taxonomy
    }

    pub fn late_queue(&self) -> &[ParticipantId] {
        &self.late_queue
    }

    pub fn end_reason(&self) -> Option<EndReason> {
        self.end_reason
    }

    /// Members of a subgroup, in id order.
    pub fn members(&self, subgroup: &SubgroupId) -> Vec<ParticipantId> {
        self.subgroups
            .get(subgroup)
            .map(|g| g.member_ids.iter().cloned().collect())
            .unwrap_or_default()
    }

    fn invalid(&self, seq: u64, reason: impl Into<String>) -> SessionError {
        SessionError::InvalidEvent {
            seq,
            reason: reason.into(),
        }
    }

    fn add_subgroup(&mut self, subgroup: Subgroup, at: Millis) {
        let policy = DistillerPolicy::from_config(&self.config);
        for p in &subgroup.member_ids {
            if let Some(part) = self.participants.get_mut(p) {
                part.subgroup_id = Some(subgroup.subgroup_id.clone());
            }
        }
        if let Some(sid) = &subgroup.surrogate_id {
            self.surrogates.insert(
                subgroup.subgroup_id.clone(),
                SurrogateState::new(sid.clone(), subgroup.subgroup_id.clone(), &policy, at),
            );
            self.matchmaker
                .add_subgroup(subgroup.subgroup_id.clone(), at);
        }
        self.subgroups
            .insert(subgroup.subgroup_id.clone(), subgroup);
    }

    /// Applies one event. This is the only place session state changes.
    pub fn apply(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        let seq = event.sequence_no;
        let expected = self.log.len() as u64 + 1;
        if seq != expected {
            return Err(self.invalid(seq, format!("expected sequence number {expected}")));
        }
        if event.wall_time < self.clock {
            return Err(self.invalid(seq, "wall time moved backwards"));
        }
        let at = event.wall_time;
        if self.phase == Phase::Ended {
            return Err(self.invalid(seq, "event after session_ended"));
        }
        match &event.payload {
            EventPayload::SessionStarted { config, subgroups } => {
                if self.phase != Phase::Lobby {
                    return Err(self.invalid(seq, "session already started"));
                }
                self.config = config.clone();
                self.matchmaker = Matchmaker::new(RoutingParams::from_config(config));
                self.taxonomy = IdeaIndex::new(TaxonomyParams::from_config(config));
                for g in subgroups {
                    self.add_subgroup(g.clone(), at);
                }
                self.lobby.clear();
                self.started_at = Some(at);
                self.phase = Phase::Running;
            }
            EventPayload::ParticipantJoined { participant } => {
                if self.phase != Phase::Running {
                    return Err(self.invalid(seq, "join logged outside running phase"));
                }
                match &participant.subgroup_id {
                    Some(g) => {
                        let group = self.subgroups.get_mut(g).ok_or_else(|| {
                            SessionError::InvalidEvent {
                                seq,
                                reason: format!("unknown subgroup {g}"),
                            }
                        })?;
                        group.member_ids.insert(participant.participant_id.clone());
                    }
                    None => self.late_queue.push(participant.participant_id.clone()),
                }
                self.participants
                    .insert(participant.participant_id.clone(), participant.clone());
            }
            EventPayload::SubgroupOpened { subgroup } => {
                if self.subgroups.contains_key(&subgroup.subgroup_id) {
                    return Err(self.invalid(seq, "subgroup already exists"));
                }
                self.late_queue.retain(|p| !subgroup.member_ids.contains(p));
                self.add_subgroup(subgroup.clone(), at);
            }
            EventPayload::MessagePosted { message } => {
                self.check_message(seq, message)?;
                if self.config.mode == Mode::Csi {
                    let profile_text = match &message.author {
                        Author::Human(_) => message.text.as_str(),
                        Author::Surrogate(_) => {
                            strip_framing(&message.text).map_or(message.text.as_str(), |(_, b)| b)
                        }
                    };
                    self.matchmaker
                        .observe(&message.subgroup_id, profile_text)?;
                    if let Some(s) = self.surrogates.get_mut(&message.subgroup_id) {
                        s.observe(message)?;
                    }
                }
                if message.author.is_human() {
                    self.taxonomy.record_assertion(
                        &message.message_id,
                        &message.subgroup_id,
                        message.timestamp,
                        &message.text,
                    );
                }
                self.message_index
                    .insert(message.message_id.clone(), self.messages.len());
                self.messages.push(message.clone());
            }
            EventPayload::InsightCreated { insight } => {
                self.check_insight(seq, insight)?;
                if let Some(s) = self.surrogates.get_mut(&insight.source_subgroup) {
                    s.mark_distilled(insight);
                }
                self.matchmaker.enqueue_insight(insight.clone());
                self.insights
                    .insert(insight.insight_id.clone(), insight.clone());
            }
            EventPayload::InsightDelivered {
                insight_id,
                receiver,
            } => {
                self.matchmaker.record_delivery(insight_id, receiver, at)?;
                let insight = self.insights.get_mut(insight_id).ok_or_else(|| {
                    SessionError::InvalidEvent {
                        seq,
                        reason: format!("unknown insight {insight_id}"),
                    }
                })?;
                insight.delivered_to.insert(receiver.clone());
                if let Some(s) = self.surrogates.get_mut(receiver) {
                    s.note_received(insight);
                }
            }
            EventPayload::SessionEnded { reason } => {
                if self.phase != Phase::Running {
                    return Err(self.invalid(seq, "end logged outside running phase"));
                }
                self.phase = Phase::Ended;
                self.end_reason = Some(*reason);
            }
        }
        self.clock = at;
        self.log.push(event);
        Ok(())
    }

    fn check_message(&self, seq: u64, m: &ChatMessage) -> Result<(), SessionError> {
        if self.phase != Phase::Running {
            return Err(self.invalid(seq, "message outside running phase"));
        }
        if !m.provenance_consistent() {
            return Err(self.invalid(seq, "author kind and provenance disagree"));
        }
        if self.message_index.contains_key(&m.message_id) {
            return Err(self.invalid(seq, format!("duplicate message id {}", m.message_id)));
        }
        let group = self
            .subgroups
            .get(&m.subgroup_id)
            .ok_or_else(|| self.invalid(seq, format!("unknown subgroup {}", m.subgroup_id)))?;
        match (&m.author, &m.provenance) {
            (Author::Human(p), _) if !group.member_ids.contains(p) => {
                Err(self.invalid(seq, format!("{p} is not a member of {}", m.subgroup_id)))
            }
            (Author::Surrogate(s), Provenance::Relayed(i)) => {
                if group.surrogate_id.as_ref() != Some(s) {
                    return Err(self.invalid(
                        seq,
                        format!("{s} is not the surrogate of {}", m.subgroup_id),
                    ));
                }
                match self.insights.get(i) {
                    Some(ins) if ins.delivered_to.contains(&m.subgroup_id) => Ok(()),
                    _ => Err(self.invalid(seq, format!("relay of undelivered insight {i}"))),
                }
            }
            _ => Ok(()),
        }
    }

    fn check_insight(&self, seq: u64, insight: &Insight) -> Result<(), SessionError> {
        if self.phase != Phase::Running || self.config.mode != Mode::Csi {
            return Err(self.invalid(seq, "insights only exist in running swarm sessions"));
        }
        if self.insights.contains_key(&insight.insight_id) {
            return Err(self.invalid(seq, "duplicate insight id"));
        }
        if insight.source_message_ids.is_empty() {
            return Err(self.invalid(seq, "insight without source messages"));
        }
        if insight.delivered_to.contains(&insight.source_subgroup)
            || !insight.delivered_to.is_empty()
        {
            return Err(self.invalid(seq, "new insight already carries deliveries"));
        }
        for id in &insight.source_message_ids {
            match self.message(id) {
                Some(m) if m.author.is_human() && m.subgroup_id == insight.source_subgroup => {}
                _ => {
                    return Err(self.invalid(
                        seq,
                        format!(
                            "source {id} is not a human message of {}",
                            insight.source_subgroup
                        ),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// A live session: state plus the distiller and pending client notices.
pub struct Session {
    state: SessionState,
    distiller: Box<dyn Distiller>,
    notices: Vec<Notice>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("state", &self.state)
            .field("notices", &self.notices.len())
            .finish_non_exhaustive()
    }
}

impl Session {
    /// A session using the verbatim extractive distiller.
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        Self::with_distiller(config, Box::new(ExtractiveDistiller))
    }

    pub fn with_distiller(
        config: SessionConfig,
        distiller: Box<dyn Distiller>,
    ) -> Result<Self, SessionError> {
        let violations = validate_config(&config);
        if !violations.is_empty() {
            return Err(SessionError::InvalidConfig(violations));
        }
        Ok(Self {
            state: SessionState::new(config),
            distiller,
            notices: Vec::new(),
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn into_state(self) -> SessionState {
        self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.state.config
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn log(&self) -> &[SessionEvent] {
        &self.state.log
    }

    /// Takes the notices produced since the last call.
    pub fn drain_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    fn emit(&mut self, payload: EventPayload, at: Millis) -> Result<u64, SessionError> {
        let sequence_no = self.state.log.len() as u64 + 1;
        let at = at.max(self.state.clock);
        self.state.apply(SessionEvent {
            sequence_no,
            wall_time: at,
            payload,
        })?;
        Ok(sequence_no)
    }

    fn audience(&self, subgroup: &SubgroupId) -> Vec<ParticipantId> {
        self.state.members(subgroup)
    }

    /// Ends the session if its duration has elapsed by `now`.
    fn check_deadline(&mut self, now: Millis) -> Result<bool, SessionError> {
        let Some(deadline) = self.state.deadline() else {
            return Ok(false);
        };
        if self.state.phase == Phase::Running && now >= deadline {
            let at = deadline.max(self.state.clock);
            self.finish(at, EndReason::DurationElapsed)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn finish(&mut self, at: Millis, reason: EndReason) -> Result<(), SessionError> {
        self.emit(EventPayload::SessionEnded { reason }, at)?;
        self.notices.push(Notice::PhaseChanged(Phase::Ended));
        Ok(())
    }

    fn next_participant_id(&self) -> ParticipantId {
        ParticipantId::new(format!("p{:04}", self.state.participants.len() + 1))
    }

    fn next_message_id(&self) -> MessageId {
        MessageId::new(format!("m{:06}", self.state.messages.len() + 1))
    }

    fn subgroup_ids(n: usize) -> (SubgroupId, SurrogateId) {
        (
            SubgroupId::new(format!("g{n:02}")),
            SurrogateId::new(format!("s{n:02}")),
        )
    }

    /// Registers a participant. Lobby joins are assigned at start; joins
    /// while running follow the late-join rule.
    pub fn join(&mut self, display_name: &str, now: Millis) -> Result<JoinOutcome, SessionError> {
        self.check_deadline(now)?;
        let participant_id = self.next_participant_id();
        match self.state.phase {
            Phase::Ended => Err(SessionError::Ended),
            Phase::Lobby => {
                self.state.participants.insert(
                    participant_id.clone(),
                    Participant {
                        participant_id: participant_id.clone(),
                        display_name: display_name.to_owned(),
                        subgroup_id: None,
                    },
                );
                self.state.lobby.push(participant_id.clone());
                Ok(JoinOutcome {
                    participant_id,
                    subgroup_id: None,
                })
            }
            Phase::Running => self.late_join(participant_id, display_name, now),
        }
    }

    fn late_join(
        &mut self,
        participant_id: ParticipantId,
        display_name: &str,
        now: Millis,
    ) -> Result<JoinOutcome, SessionError> {
        let target = match self.state.config.mode {
            Mode::SingleRoom => self.state.subgroups.keys().next().cloned(),
            Mode::Csi => {
                let groups: Vec<(&SubgroupId, usize)> = self
                    .state
                    .subgroups
                    .iter()
                    .map(|(id, g)| (id, g.member_ids.len()))
                    .collect();
                let sizes: Vec<usize> = groups.iter().map(|(_, s)| *s).collect();
                match partition::place_late_joiner(&sizes) {
                    LateJoin::Append(i) => Some(groups[i].0.clone()),
                    LateJoin::Queue => None,
                }
            }
        };
        let participant = Participant {
            participant_id: participant_id.clone(),
            display_name: display_name.to_owned(),
            subgroup_id: target.clone(),
        };
        self.emit(EventPayload::ParticipantJoined { participant }, now)?;
        if let Some(g) = &target {
            self.notices.push(Notice::Assigned {
                participant: participant_id.clone(),
                subgroup: g.clone(),
            });
            return Ok(JoinOutcome {
                participant_id,
                subgroup_id: target,
            });
        }
        if self.state.late_queue.len() >= MIN_SUBGROUP {
            let (gid, sid) = Self::subgroup_ids(self.state.subgroups.len() + 1);
            let members: BTreeSet<ParticipantId> = self.state.late_queue.iter().cloned().collect();
            let subgroup = Subgroup {
                subgroup_id: gid.clone(),
                member_ids: members.clone(),
                surrogate_id: Some(sid),
            };
            self.emit(EventPayload::SubgroupOpened { subgroup }, now)?;
            for p in members {
                self.notices.push(Notice::Assigned {
                    participant: p,
                    subgroup: gid.clone(),
                });
            }
            return Ok(JoinOutcome {
                participant_id,
                subgroup_id: Some(gid),
            });
        }
        Ok(JoinOutcome {
            participant_id,
            subgroup_id: None,
        })
    }

    /// Partitions the lobby and opens the session at time `now`.
    pub fn start(&mut self, now: Millis) -> Result<(), SessionError> {
        if self.state.phase != Phase::Lobby {
            return Err(SessionError::WrongPhase {
                expected: Phase::Lobby,
                actual: self.state.phase,
            });
        }
        let roster = self.state.lobby.clone();
        let config = self.state.config.clone();
        let subgroups: Vec<Subgroup> = match config.mode {
            Mode::Csi => {
                if roster.len() < MIN_SUBGROUP {
                    return Err(SessionError::RosterTooSmall {
                        have: roster.len(),
                        need: MIN_SUBGROUP,
                    });
                }
                let plan = partition::partition(
                    &roster,
                    config.target_subgroup_size as usize,
                    config.random_seed,
                )?;
                plan.subgroups
                    .into_iter()
                    .enumerate()
                    .map(|(i, members)| {
                        let (gid, sid) = Self::subgroup_ids(i + 1);
                        Subgroup {
                            subgroup_id: gid,
                            member_ids: members,
                            surrogate_id: Some(sid),
                        }
                    })
                    .collect()
            }
            Mode::SingleRoom => {
                if roster.is_empty() {
                    return Err(SessionError::RosterTooSmall { have: 0, need: 1 });
                }
                vec![Subgroup {
                    subgroup_id: SubgroupId::new("room"),
                    member_ids: roster.iter().cloned().collect(),
                    surrogate_id: None,
                }]
            }
        };
        let assignment: BTreeMap<ParticipantId, SubgroupId> = subgroups
            .iter()
            .flat_map(|g| {
                g.member_ids
                    .iter()
                    .map(|p| (p.clone(), g.subgroup_id.clone()))
            })
            .collect();
        self.emit(EventPayload::SessionStarted { config, subgroups }, now)?;
        for p in roster {
            let mut participant = self.state.participants[&p].clone();
            participant.subgroup_id = assignment.get(&p).cloned();
            self.emit(EventPayload::ParticipantJoined { participant }, now)?;
            if let Some(g) = assignment.get(&p) {
                self.notices.push(Notice::Assigned {
                    participant: p,
                    subgroup: g.clone(),
                });
            }
        }
        self.notices.push(Notice::PhaseChanged(Phase::Running));
        Ok(())
    }

    fn require_running(&self) -> Result<(), SessionError> {
        match self.state.phase {
            Phase::Running => Ok(()),
            Phase::Ended => Err(SessionError::Ended),
            actual => Err(SessionError::WrongPhase {
                expected: Phase::Running,
                actual,
            }),
        }
    }

    /// Accepts a participant's chat line and fans it out to their subgroup.
    pub fn post_message(
        &mut self,
        participant: &ParticipantId,
        text: &str,
        now: Millis,
    ) -> Result<Posted, SessionError> {
        self.check_deadline(now)?;
        self.require_running()?;
        if text.trim().is_empty() {
            return Err(SessionError::EmptyMessage);
        }
        let p = self
            .state
            .participants
            .get(participant)
            .ok_or_else(|| SessionError::UnknownParticipant(participant.clone()))?;
        let subgroup = p
            .subgroup_id
            .clone()
            .ok_or_else(|| SessionError::Unassigned(participant.clone()))?;
        let message = ChatMessage::human(
            self.next_message_id(),
            subgroup.clone(),
            participant.clone(),
            now.max(self.state.clock),
            text,
        );
        self.emit(
            EventPayload::MessagePosted {
                message: message.clone(),
            },
            now,
        )?;
        let audience = self.audience(&subgroup);
        let recipients = audience
            .iter()
            .filter(|a| *a != participant)
            .cloned()
            .collect();
        self.notices.push(Notice::Chat {
            audience,
            message: message.clone(),
        });
        Ok(Posted {
            message,
            recipients,
        })
    }

    /// One scheduler step: distillation triggers, then routing, then relay
    /// rendering. Ends the session once its duration has elapsed.
    pub fn tick(&mut self, now: Millis) -> Result<TickOutcome, SessionError> {
        let mut out = TickOutcome::default();
        if self.check_deadline(now)? {
            out.ended = true;
            return Ok(out);
        }
        self.require_running()?;
        let now = now.max(self.state.clock);
        if self.state.config.mode != Mode::Csi {
            return Ok(out);
        }

        let policy = DistillerPolicy::from_config(&self.state.config);
        let due: Vec<SubgroupId> = self
            .state
            .surrogates
            .iter()
            .filter(|(_, s)| s.trigger_due(&policy, now))
            .map(|(g, _)| g.clone())
            .collect();
        for g in due {
            let result = self.distiller.distill(&self.state.surrogates[&g], &policy);
            match result {
                Ok(Some(d)) => {
                    let insight_id =
                        InsightId::new(format!("i{:05}", self.state.insights.len() + 1));
                    let insight = Insight {
                        insight_id: insight_id.clone(),
                        source_subgroup: g.clone(),
                        text: d.text,
                        source_message_ids: d.source_message_ids,
                        created_at: now,
                        delivered_to: BTreeSet::new(),
                    };
                    self.emit(EventPayload::InsightCreated { insight }, now)?;
                    out.insights_created.push(insight_id);
                }
                Ok(None) => {}
                Err(e) => {
                    tracing::warn!(subgroup = %g, error = %e, "distillation degraded; skipping this cycle");
                    out.degraded += 1;
                }
            }
        }

        let plan = self.state.matchmaker.plan_tick(now);
        let mut delivered = Vec::with_capacity(plan.len());
        for d in &plan {
            let seq = self.emit(
                EventPayload::InsightDelivered {
                    insight_id: d.insight_id.clone(),
                    receiver: d.receiver.clone(),
                },
                now,
            )?;
            delivered.push((d, seq));
        }
        for (d, seq) in delivered {
            let insight = self.state.insights[&d.insight_id].clone();
            let surrogate = self.state.subgroups[&d.receiver]
                .surrogate_id
                .clone()
                .expect("swarm subgroups have a surrogate");
            let message = render_insight(
                &insight,
                &surrogate,
                &d.receiver,
                self.next_message_id(),
                now,
                self.state.config.random_seed.wrapping_add(seq),
            );
            self.emit(
                EventPayload::MessagePosted {
                    message: message.clone(),
                },
                now,
            )?;
            self.notices.push(Notice::Chat {
                audience: self.audience(&d.receiver),
                message,
            });
        }
        out.deliveries = plan;
        Ok(out)
    }

    /// Ends a running session. Ending twice is a no-op.
    pub fn end(&mut self, now: Millis) -> Result<(), SessionError> {
        match self.state.phase {
            Phase::Ended => Ok(()),
            Phase::Lobby => Err(SessionError::WrongPhase {
                expected: Phase::Running,
                actual: Phase::Lobby,
            }),
            Phase::Running => {
                if self.check_deadline(now)? {
                    return Ok(());
                }
                self.finish(now, EndReason::Manual)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lobby(config: SessionConfig, n: usize) -> Session {
        let mut s = Session::new(config).unwrap();
        for i in 0..n {
            s.join(&format!("bot{i}"), 0).unwrap();
        }
        s
    }

    #[test]
    fn invalid_config_rejected() {
        let err = Session::new(SessionConfig::csi("x", 3)).unwrap_err();
        assert!(matches!(err, SessionError::InvalidConfig(v) if v[0].message == "size below 4"));
    }

    #[test]
    fn seventy_five_join_then_start() {
        let mut s = lobby(SessionConfig::csi("x", 5), 75);
        s.start(0).unwrap();
        assert_eq!(s.state().subgroups().count(), 15);
        assert!(s
            .state()
            .subgroups()
            .all(|g| g.member_ids.len() == 5 && g.surrogate_id.is_some()));
        assert_eq!(s.state().surrogates.len(), 15);
        assert!(s.state().participants().all(|p| p.subgroup_id.is_some()));
    }

    #[test]
    fn single_room_has_one_room_no_surrogates() {
        let mut s = lobby(SessionConfig::single_room("x"), 75);
        s.start(0).unwrap();
        assert_eq!(s.state().subgroups().count(), 1);
        assert!(s.state().surrogates.is_empty());
        let p = ParticipantId::new("p0001");
        let posted = s.post_message(&p, "hello room", 10).unwrap();
        assert_eq!(posted.recipients.len(), 74);
    }

    #[test]
    fn three_participants_cannot_start_swarm() {
        let mut s = lobby(SessionConfig::csi("x", 5), 3);
        assert!(matches!(
            s.start(0),
            Err(SessionError::RosterTooSmall { have: 3, .. })
        ));
    }

    #[test]
    fn post_fans_out_within_subgroup_only() {
        let mut s = lobby(SessionConfig::csi("x", 5), 75);
        s.start(0).unwrap();
        s.drain_notices();
        let g = s.state().subgroup(&"g03".into()).unwrap().clone();
        let author = g.member_ids.iter().next().unwrap().clone();
        let posted = s
            .post_message(&author, "cones for everyone", 1_000)
            .unwrap();
        assert_eq!(posted.recipients.len(), 4);
        assert!(posted.recipients.iter().all(|r| g.member_ids.contains(r)));
        assert!(!posted.recipients.contains(&author));
        assert_eq!(posted.message.provenance, Provenance::Original);
    }

    #[test]
    fn post_errors() {
        let mut s = lobby(SessionConfig::csi("x", 5), 5);
        let p = ParticipantId::new("p0001");
        assert!(matches!(
            s.post_message(&p, "hi", 0),
            Err(SessionError::WrongPhase { .. })
        ));
        s.start(0).unwrap();
        assert_eq!(s.post_message(&p, "  ", 0), Err(SessionError::EmptyMessage));
        assert!(matches!(
            s.post_message(&"p9999".into(), "hi", 0),
            Err(SessionError::UnknownParticipant(_))
        ));
        s.end(1_000).unwrap();
        assert_eq!(
            s.post_message(&p, "hi", 2_000).unwrap_err(),
            SessionError::Ended
        );
    }

    #[test]
    fn late_join_appends_to_smallest() {
        let mut s = lobby(SessionConfig::csi("x", 5), 75);
        s.start(0).unwrap();
        let out = s.join("late", 5_000).unwrap();
        let g = out.subgroup_id.unwrap();
        assert_eq!(s.state().subgroup(&g).unwrap().member_ids.len(), 6);
        assert!(s.state().subgroups().all(|g| g.member_ids.len() <= 7));
    }

    #[test]
    fn late_joiners_queue_then_open_subgroup() {
        let mut s = lobby(SessionConfig::csi("x", 7), 14);
        s.start(0).unwrap();
        for i in 0..3 {
            assert_eq!(
                s.join(&format!("late{i}"), 1_000).unwrap().subgroup_id,
                None
            );
        }
        assert_eq!(s.state().late_queue().len(), 3);
        let out = s.join("late3", 1_000).unwrap();
        let g = out.subgroup_id.unwrap();
        assert_eq!(s.state().subgroup(&g).unwrap().member_ids.len(), 4);
        assert!(s.state().late_queue().is_empty());
        assert!(s.state().surrogate(&g).is_some());
    }

    #[test]
    fn join_after_end_fails() {
        let mut s = lobby(SessionConfig::csi("x", 5), 5);
        s.start(0).unwrap();
        s.end(10).unwrap();
        assert_eq!(s.join("late", 20).unwrap_err(), SessionError::Ended);
    }

    #[test]
    fn end_is_idempotent_and_auto_ends() {
        let mut s = lobby(SessionConfig::csi("x", 5), 5);
        s.start(0).unwrap();
        let out = s.tick(720_000).unwrap();
        assert!(out.ended);
        assert_eq!(s.phase(), Phase::Ended);
        assert_eq!(s.state().end_reason(), Some(EndReason::DurationElapsed));
        let n = s.log().len();
        s.end(800_000).unwrap();
        assert_eq!(s.log().len(), n);
    }

    #[test]
    fn duration_counts_from_start_not_lobby() {
        let mut s = lobby(SessionConfig::csi("x", 5), 5);
        s.start(60_000).unwrap();
        assert_eq!(s.state().deadline(), Some(780_000));
        assert!(!s.tick(720_000).unwrap().ended);
        assert!(s.tick(780_000).unwrap().ended);
        let replayed = SessionState::replay(s.log()).unwrap();
        assert_eq!(&replayed, s.state());
    }

    #[test]
    fn quiet_tick_emits_nothing() {
        let mut s = lobby(SessionConfig::csi("x", 5), 10);
        s.start(0).unwrap();
        let n = s.log().len();
        let out = s.tick(5_000).unwrap();
        assert_eq!(out, TickOutcome::default());
        assert_eq!(s.log().len(), n);
    }

    #[test]
    fn replay_matches_live_state() {
        let mut s = lobby(SessionConfig::csi("x", 5), 10);
        s.start(0).unwrap();
        let members = s.state().members(&"g01".into());
        for (i, p) in members.iter().cycle().take(6).enumerate() {
            s.post_message(
                p,
                &format!("plunger idea number {i} with suction cups and drums"),
                1_000 * i as u64,
            )
            .unwrap();
        }
        s.tick(10_000).unwrap();
        s.tick(50_000).unwrap();
        s.end(60_000).unwrap();
        let replayed = SessionState::replay(s.log()).unwrap();
        assert_eq!(&replayed, s.state());
    }

    #[test]
    fn replay_rejects_gaps_and_foreign_authors() {
        let mut s = lobby(SessionConfig::csi("x", 5), 10);
        s.start(0).unwrap();
        let mut log = s.log().to_vec();
        log.remove(2);
        assert!(matches!(
            SessionState::replay(&log),
            Err(SessionError::InvalidEvent { .. })
        ));

        let mut log = s.log().to_vec();
        let outsider = s.state().members(&"g02".into())[0].clone();
        log.push(SessionEvent {
            sequence_no: log.len() as u64 + 1,
            wall_time: 5,
            payload: EventPayload::MessagePosted {
                message: ChatMessage::human("m1".into(), "g01".into(), outsider, 5, "hi"),
            },
        });
        assert!(matches!(
            SessionState::replay(&log),
            Err(SessionError::InvalidEvent { .. })
        ));
    }
}
