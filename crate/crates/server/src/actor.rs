//! One thread per live session. Every command is applied in arrival order,
//! so the session's event log is the single serialized record of what
//! happened; fan-out to connections happens from the same thread, which
//! keeps each subgroup's delivery order equal to log order.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use csi_core::eventlog::{self, LogAppender};
use csi_core::model::{
    Author, ChatMessage, DistillerBackend, Millis, ParticipantId, Provenance, SessionConfig,
    SessionId, SubgroupId,
};
use csi_core::report::{forensic_report, ForensicReport};
use csi_core::session::{Notice, Phase, Session, SessionError};
use csi_core::surrogate::{Distiller, ExtractiveDistiller, LlmDistiller};
use csi_core::survey::{self, AnalysisOptions, Answer, QuestionResult, SurveyResponse};
use serde::Serialize;
use tokio::sync::{mpsc, oneshot};

use crate::error::ApiError;
use crate::llm::HttpCompletionBackend;
use crate::wire::{AuthorKind, RelayProvenance, RosterEntry, ServerMsg};

/// Milliseconds since some fixed origin.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;
}

pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> Millis {
        self.0.elapsed().as_millis() as Millis
    }
}

/// A clock that only moves when told to; for tests and demos.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn set(&self, ms: Millis) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: Millis) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> Millis {
        self.0.load(Ordering::SeqCst)
    }
}

/// Outgoing half of one participant connection.
pub type Outbox = mpsc::UnboundedSender<ServerMsg>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionStatus {
    pub session_id: SessionId,
    pub phase: Phase,
    pub clock_ms: Millis,
    pub remaining_seconds: u64,
    pub participants: usize,
    pub subgroups: usize,
    pub events: usize,
    pub survey_responses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joined {
    pub participant_id: ParticipantId,
    pub subgroup_id: Option<SubgroupId>,
}

type Reply<T> = oneshot::Sender<Result<T, ApiError>>;

enum Command {
    Join {
        name: String,
        conn: u64,
        outbox: Option<Outbox>,
        reply: Reply<Joined>,
    },
    Detach {
        participant: ParticipantId,
        conn: u64,
    },
    Chat {
        participant: ParticipantId,
        text: String,
        reply: Reply<()>,
    },
    Survey {
        participant: ParticipantId,
        answers: BTreeMap<String, Answer>,
        reply: Reply<()>,
    },
    Start {
        reply: Reply<SessionStatus>,
    },
    End {
        reply: Reply<SessionStatus>,
    },
    Tick {
        reply: Option<Reply<SessionStatus>>,
    },
    Status {
        reply: Reply<SessionStatus>,
    },
    Log {
        reply: Reply<String>,
    },
    Report {
        reply: Reply<ForensicReport>,
    },
    SurveyResults {
        options: AnalysisOptions,
        reply: Reply<Vec<QuestionResult>>,
    },
}

/// Cheap, cloneable address of a session actor.
#[derive(Clone)]
pub struct SessionHandle {
    id: SessionId,
    tx: mpsc::UnboundedSender<Command>,
}

impl SessionHandle {
    /// Validates `config`, opens the log under `dir` (if any) and starts the
    /// actor thread.
    pub fn spawn(
        config: SessionConfig,
        clock: Arc<dyn Clock>,
        dir: Option<PathBuf>,
    ) -> Result<Self, ApiError> {
        let distiller: Box<dyn Distiller> = match (config.distiller_backend, &config.llm) {
            (DistillerBackend::ExternalLlm, Some(endpoint)) => Box::new(LlmDistiller::new(
                HttpCompletionBackend::new(endpoint.clone()),
                config.task_prompt.clone(),
            )),
            _ => Box::new(ExtractiveDistiller),
        };
        let id = config.session_id.clone();
        let session = Session::with_distiller(config, distiller)?;
        let appender = match &dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| ApiError::Internal(e.to_string()))?;
                Some(
                    LogAppender::open(d.join("events.jsonl"))
                        .map_err(|e| ApiError::Internal(e.to_string()))?,
                )
            }
            None => None,
        };
        let (tx, rx) = mpsc::unbounded_channel();
        let actor = Actor {
            origin: clock.now_ms(),
            clock,
            session,
            dir,
            appender,
            outboxes: BTreeMap::new(),
            surveys: BTreeMap::new(),
            ended_announced: false,
        };
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || actor.run(rx))
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(Self { id, tx })
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| ApiError::Closed)?;
        rx.await.map_err(|_| ApiError::Closed)?
    }

    /// Registers a participant. With an outbox, the connection receives
    /// `welcome` and `system` at once and every later record addressed to
    /// the participant.
    pub async fn join(
        &self,
        name: &str,
        conn: u64,
        outbox: Option<Outbox>,
    ) -> Result<Joined, ApiError> {
        let name = name.to_owned();
        self.call(|reply| Command::Join {
            name,
            conn,
            outbox,
            reply,
        })
        .await
    }

    /// Drops one connection; membership is kept.
    pub fn detach(&self, participant: ParticipantId, conn: u64) {
        let _ = self.tx.send(Command::Detach { participant, conn });
    }

    pub async fn chat(&self, participant: &ParticipantId, text: &str) -> Result<(), ApiError> {
        let (participant, text) = (participant.clone(), text.to_owned());
        self.call(|reply| Command::Chat {
            participant,
            text,
            reply,
        })
        .await
    }

    pub async fn survey(
        &self,
        participant: &ParticipantId,
        answers: BTreeMap<String, Answer>,
    ) -> Result<(), ApiError> {
        let participant = participant.clone();
        self.call(|reply| Command::Survey {
            participant,
            answers,
            reply,
        })
        .await
    }

    pub async fn start(&self) -> Result<SessionStatus, ApiError> {
        self.call(|reply| Command::Start { reply }).await
    }

    /// Ends the session; ending an ended session is a no-op.
    pub async fn end(&self) -> Result<SessionStatus, ApiError> {
        self.call(|reply| Command::End { reply }).await
    }

    pub async fn tick(&self) -> Result<SessionStatus, ApiError> {
        self.call(|reply| Command::Tick { reply: Some(reply) })
            .await
    }

    /// Fire-and-forget tick for the scheduler; false once the actor is gone.
    pub fn tick_nowait(&self) -> bool {
        self.tx.send(Command::Tick { reply: None }).is_ok()
    }

    pub async fn status(&self) -> Result<SessionStatus, ApiError> {
        self.call(|reply| Command::Status { reply }).await
    }

    /// The event log as JSON Lines.
    pub async fn log(&self) -> Result<String, ApiError> {
        self.call(|reply| Command::Log { reply }).await
    }

    pub async fn report(&self) -> Result<ForensicReport, ApiError> {
        self.call(|reply| Command::Report { reply }).await
    }

    pub async fn survey_results(
        &self,
        options: AnalysisOptions,
    ) -> Result<Vec<QuestionResult>, ApiError> {
        self.call(|reply| Command::SurveyResults { options, reply })
            .await
    }
}

struct Actor {
    clock: Arc<dyn Clock>,
    origin: Millis,
    session: Session,
    dir: Option<PathBuf>,
    appender: Option<LogAppender>,
    outboxes: BTreeMap<ParticipantId, Vec<(u64, Outbox)>>,
    surveys: BTreeMap<ParticipantId, SurveyResponse>,
    ended_announced: bool,
}

impl Actor {
    fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.blocking_recv() {
            self.handle(cmd);
            self.flush();
        }
    }

    /// Persists and fans out before answering, so a caller that sees the
    /// reply knows every connection already has the resulting records.
    fn respond<T>(&mut self, reply: Reply<T>, result: Result<T, ApiError>) {
        self.flush();
        let _ = reply.send(result);
    }

    fn flush(&mut self) {
        if let Err(e) = self.after_command() {
            tracing::error!(session = %self.session.config().session_id, error = %e, "persisting session failed");
        }
    }

    fn now(&self) -> Millis {
        self.clock.now_ms().saturating_sub(self.origin)
    }

    fn handle(&mut self, cmd: Command) {
        let now = self.now();
        match cmd {
            Command::Join {
                name,
                conn,
                outbox,
                reply,
            } => {
                let r = self.join(&name, conn, outbox, now);
                self.respond(reply, r);
            }
            Command::Detach { participant, conn } => {
                if let Some(list) = self.outboxes.get_mut(&participant) {
                    list.retain(|(c, _)| *c != conn);
                }
            }
            Command::Chat {
                participant,
                text,
                reply,
            } => {
                let r = self
                    .session
                    .post_message(&participant, &text, now)
                    .map(|_| ())
                    .map_err(ApiError::from);
                self.respond(reply, r);
            }
            Command::Survey {
                participant,
                answers,
                reply,
            } => {
                let r = self.survey(participant, answers, now);
                self.respond(reply, r);
            }
            Command::Start { reply } => {
                let r = self
                    .session
                    .start(now)
                    .map_err(ApiError::from)
                    .map(|()| self.status());
                self.respond(reply, r);
            }
            Command::End { reply } => {
                let r = self
                    .session
                    .end(now)
                    .map_err(ApiError::from)
                    .map(|()| self.status());
                self.respond(reply, r);
            }
            Command::Tick { reply } => {
                let r = match self.session.phase() {
                    Phase::Running => self.session.tick(now).map(|_| ()).map_err(ApiError::from),
                    _ => Ok(()),
                }
                .map(|()| self.status());
                if let Err(e) = &r {
                    tracing::warn!(error = %e, "tick failed");
                }
                if let Some(reply) = reply {
                    self.respond(reply, r);
                }
            }
            Command::Status { reply } => {
                self.respond(reply, Ok(self.status()));
            }
            Command::Log { reply } => {
                self.respond(reply, Ok(eventlog::to_jsonl(self.session.log())));
            }
            Command::Report { reply } => {
                self.respond(reply, Ok(forensic_report(self.session.log())));
            }
            Command::SurveyResults { options, reply } => {
                let responses: Vec<SurveyResponse> = self.surveys.values().cloned().collect();
                self.respond(
                    reply,
                    survey::analyze_surveys(&responses, &options).map_err(ApiError::from),
                );
            }
        }
    }

    fn join(
        &mut self,
        name: &str,
        conn: u64,
        outbox: Option<Outbox>,
        now: Millis,
    ) -> Result<Joined, ApiError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ApiError::BadRequest("display_name is empty".into()));
        }
        let outcome = self.session.join(name, now)?;
        let pid = outcome.participant_id.clone();
        if let Some(outbox) = outbox {
            self.outboxes
                .entry(pid.clone())
                .or_default()
                .push((conn, outbox));
        }
        self.send_to(&pid, self.welcome(&pid));
        self.send_to(&pid, self.system());
        Ok(Joined {
            participant_id: pid,
            subgroup_id: outcome.subgroup_id,
        })
    }

    fn survey(
        &mut self,
        participant: ParticipantId,
        answers: BTreeMap<String, Answer>,
        now: Millis,
    ) -> Result<(), ApiError> {
        // Reaching the deadline while idle still counts as ended.
        if self.session.phase() == Phase::Running
            && self.session.state().deadline().is_some_and(|d| now >= d)
        {
            self.session.tick(now)?;
        }
        if self.session.phase() != Phase::Ended {
            return Err(ApiError::Conflict(
                "surveys open once the session has ended".into(),
            ));
        }
        if self.session.state().participant(&participant).is_none() {
            return Err(ApiError::BadRequest(format!(
                "unknown participant {participant}"
            )));
        }
        if self.surveys.contains_key(&participant) {
            return Err(ApiError::Conflict(format!(
                "{participant} already answered the survey"
            )));
        }
        let response = SurveyResponse::new(participant.to_string(), answers)?;
        self.surveys.insert(participant, response);
        if let Some(dir) = &self.dir {
            let responses: Vec<SurveyResponse> = self.surveys.values().cloned().collect();
            let csv = survey::to_csv(&responses)?;
            std::fs::write(dir.join("surveys.csv"), csv)
                .map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        Ok(())
    }

    /// Persists new events, fans out notices and announces the end once.
    fn after_command(&mut self) -> Result<(), ApiError> {
        if let Some(appender) = &mut self.appender {
            appender
                .sync(self.session.log())
                .map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        for notice in self.session.drain_notices() {
            match notice {
                Notice::Chat { audience, message } => {
                    let record = self.chat_record(&message);
                    for p in &audience {
                        self.send_to(p, record.clone());
                    }
                }
                Notice::Assigned { participant, .. } => {
                    self.send_to(&participant, self.welcome(&participant));
                }
                Notice::PhaseChanged(_) => {
                    let record = self.system();
                    self.broadcast(record);
                }
            }
        }
        if self.session.phase() == Phase::Ended && !self.ended_announced {
            self.ended_announced = true;
            if let Some(dir) = &self.dir {
                let report = forensic_report(self.session.log());
                std::fs::write(dir.join("report.json"), report.to_json())
                    .map_err(|e| ApiError::Internal(e.to_string()))?;
                std::fs::write(dir.join("report.txt"), report.render_text())
                    .map_err(|e| ApiError::Internal(e.to_string()))?;
            }
            let record = ServerMsg::Ended {
                report_ref: format!("/sessions/{}/report", self.session.config().session_id),
            };
            self.broadcast(record);
        }
        Ok(())
    }

    fn send_to(&mut self, participant: &ParticipantId, record: ServerMsg) {
        if let Some(list) = self.outboxes.get_mut(participant) {
            list.retain(|(_, tx)| tx.send(record.clone()).is_ok());
        }
    }

    fn broadcast(&mut self, record: ServerMsg) {
        for list in self.outboxes.values_mut() {
            list.retain(|(_, tx)| tx.send(record.clone()).is_ok());
        }
    }

    fn welcome(&self, participant: &ParticipantId) -> ServerMsg {
        let state = self.session.state();
        let subgroup_id = state
            .participant(participant)
            .and_then(|p| p.subgroup_id.clone());
        let roster = subgroup_id
            .as_ref()
            .map(|g| {
                state
                    .members(g)
                    .into_iter()
                    .filter_map(|m| state.participant(&m))
                    .map(|p| RosterEntry {
                        participant_id: p.participant_id.clone(),
                        display_name: p.display_name.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        ServerMsg::Welcome {
            participant_id: participant.clone(),
            subgroup_id,
            roster,
        }
    }

    fn system(&self) -> ServerMsg {
        let config = self.session.config();
        ServerMsg::System {
            phase: self.session.phase(),
            remaining_seconds: self.remaining_seconds(),
            task_prompt: config.task_prompt.clone(),
        }
    }

    fn chat_record(&self, message: &ChatMessage) -> ServerMsg {
        let state = self.session.state();
        let (author_kind, author_name) = match &message.author {
            Author::Human(p) => (
                AuthorKind::Human,
                state
                    .participant(p)
                    .map_or_else(|| p.to_string(), |x| x.display_name.clone()),
            ),
            Author::Surrogate(s) => (AuthorKind::Surrogate, s.to_string()),
        };
        let provenance = match &message.provenance {
            Provenance::Original => None,
            Provenance::Relayed(id) => state.insight(id).map(|i| RelayProvenance {
                insight_id: i.insight_id.clone(),
                source_subgroup: i.source_subgroup.clone(),
                source_message_ids: i.source_message_ids.clone(),
            }),
        };
        ServerMsg::Chat {
            message_id: message.message_id.clone(),
            author_kind,
            author_name,
            text: message.text.clone(),
            provenance,
            timestamp: message.timestamp,
        }
    }

    fn remaining_seconds(&self) -> u64 {
        match (self.session.phase(), self.session.state().deadline()) {
            (Phase::Running, Some(deadline)) => deadline.saturating_sub(self.now()).div_ceil(1000),
            (Phase::Ended, _) => 0,
            _ => self.session.config().duration,
        }
    }

    fn status(&self) -> SessionStatus {
        let state = self.session.state();
        SessionStatus {
            session_id: self.session.config().session_id.clone(),
            phase: self.session.phase(),
            clock_ms: state.clock(),
            remaining_seconds: self.remaining_seconds(),
            participants: state.participants().count(),
            subgroups: state.subgroups().count(),
            events: state.log().len(),
            survey_responses: self.surveys.len(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::InvalidConfig(v) => ApiError::Invalid(v),
            SessionError::WrongPhase { .. }
            | SessionError::Ended
            | SessionError::RosterTooSmall { .. } => ApiError::Conflict(e.to_string()),
            SessionError::UnknownParticipant(_)
            | SessionError::Unassigned(_)
            | SessionError::EmptyMessage => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}
