//! Conversational swarm deliberation engine. A session splits a roster into
//! small subgroups; per-subgroup surrogates distill ideas and relay them
//! verbatim to other subgroups chosen by novelty. Every change is an event in
//! an append-only log that replays to the same state and report.

pub mod eventlog;
pub mod matchmaker;
pub mod model;
pub mod partition;
pub mod report;
pub mod session;
pub mod sim;
pub mod surrogate;
pub mod survey;
pub mod taxonomy;
pub mod text;
