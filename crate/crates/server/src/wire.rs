//! Line-delimited JSON records exchanged over the participant connection.

use std::collections::BTreeMap;

use csi_core::model::{InsightId, MessageId, Millis, ParticipantId, SessionId, SubgroupId};
use csi_core::session::Phase;
use csi_core::survey::Answer;
use serde::{Deserialize, Serialize};

/// What a participant's client may send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Join {
        session_id: SessionId,
        display_name: String,
    },
    Chat {
        text: String,
    },
    Survey {
        answers: BTreeMap<String, Answer>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub participant_id: ParticipantId,
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorKind {
    Human,
    Surrogate,
}

/// Where a relayed message's content came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayProvenance {
    pub insight_id: InsightId,
    pub source_subgroup: SubgroupId,
    pub source_message_ids: Vec<MessageId>,
}

/// What the server sends to a participant's client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    /// Sent on join and again whenever the participant's subgroup is set.
    /// `subgroup_id` is null while waiting in the lobby.
    Welcome {
        participant_id: ParticipantId,
        subgroup_id: Option<SubgroupId>,
        roster: Vec<RosterEntry>,
    },
    Chat {
        message_id: MessageId,
        author_kind: AuthorKind,
        author_name: String,
        text: String,
        /// Null for original human messages.
        provenance: Option<RelayProvenance>,
        timestamp: Millis,
    },
    System {
        phase: Phase,
        remaining_seconds: u64,
        task_prompt: String,
    },
    Ended {
        report_ref: String,
    },
    /// A rejected client record; the connection stays open.
    Error {
        message: String,
    },
}

impl ServerMsg {
    /// One JSON record followed by a newline.
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("server records serialize");
        line.push('\n');
        line
    }
}

/// Parses every non-blank line of a frame.
pub fn parse_client_lines(frame: &str) -> Vec<Result<ClientMsg, serde_json::Error>> {
    frame
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_records_use_exact_field_names() {
        let join: ClientMsg = serde_json::from_str(
            r#"{"type":"join","session_id":"demo-0001","display_name":"Ada"}"#,
        )
        .unwrap();
        assert_eq!(
            join,
            ClientMsg::Join {
                session_id: "demo-0001".into(),
                display_name: "Ada".into()
            }
        );
        let survey: ClientMsg =
            serde_json::from_str(r#"{"type":"survey","answers":{"q1":"csi","q2":"chat"}}"#)
                .unwrap();
        assert!(matches!(survey, ClientMsg::Survey { answers } if answers["q2"] == Answer::Chat));
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"shout","text":"x"}"#).is_err());
    }

    #[test]
    fn server_records_are_single_lines() {
        let msg = ServerMsg::Chat {
            message_id: "m000001".into(),
            author_kind: AuthorKind::Surrogate,
            author_name: "s01".into(),
            text: "Another group suggested:\nline".into(),
            provenance: Some(RelayProvenance {
                insight_id: "i00001".into(),
                source_subgroup: "g02".into(),
                source_message_ids: vec!["m000004".into()],
            }),
            timestamp: 45_000,
        };
        let line = msg.to_line();
        assert_eq!(line.matches('\n').count(), 1);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for key in [
            "type",
            "message_id",
            "author_kind",
            "author_name",
            "text",
            "provenance",
            "timestamp",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["author_kind"], "surrogate");
        let system = ServerMsg::System {
            phase: Phase::Running,
            remaining_seconds: 700,
            task_prompt: String::new(),
        };
        assert_eq!(
            serde_json::to_value(&system).unwrap(),
            serde_json::json!({"type":"system","phase":"running","remaining_seconds":700,"task_prompt":""})
        );
    }

    #[test]
    fn frames_may_carry_several_lines() {
        let parsed = parse_client_lines(
            "{\"type\":\"chat\",\"text\":\"a\"}\n\n{\"type\":\"chat\",\"text\":\"b\"}\n",
        );
        assert_eq!(parsed.len(), 2);
        assert!(parsed.iter().all(Result::is_ok));
    }
}
