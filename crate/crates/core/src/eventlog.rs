//! JSON Lines persistence for session logs: one event per line, appended
//! in sequence order.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::SessionEvent;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn to_line(event: &SessionEvent) -> String {
    serde_json::to_string(event).expect("events serialize")
}

/// Serializes a whole log, one record per line with a trailing newline.
pub fn to_jsonl(events: &[SessionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&to_line(e));
        out.push('\n');
    }
    out
}

/// Parses a log, skipping blank lines.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<SessionEvent>, LogError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&line).map_err(|source| LogError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(events)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<SessionEvent>, LogError> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_file(path: impl AsRef<Path>, events: &[SessionEvent]) -> Result<(), LogError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_jsonl(events).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Append-only writer that flushes after every record, so a crash loses at
/// most the event being written.
#[derive(Debug)]
pub struct LogAppender {
    file: File,
    written: usize,
}

impl LogAppender {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file, written: 0 })
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), LogError> {
        let mut line = to_line(event);
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.written += 1;
        Ok(())
    }

    /// Appends the events past what this appender has already written.
    pub fn sync(&mut self, log: &[SessionEvent]) -> Result<(), LogError> {
        for e in log.iter().skip(self.written) {
            self.append(e)?;
        }
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EndReason, EventPayload};

    fn ended(seq: u64) -> SessionEvent {
        SessionEvent {
            sequence_no: seq,
            wall_time: 10,
            payload: EventPayload::SessionEnded {
                reason: EndReason::Manual,
            },
        }
    }

    #[test]
    fn round_trip_text() {
        let log = vec![ended(1), ended(2)];
        let text = to_jsonl(&log);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_jsonl(text.as_bytes()).unwrap(), log);
    }

    #[test]
    fn parse_error_names_line() {
        let text = format!("{}\n\nnot json\n", to_line(&ended(1)));
        match read_jsonl(text.as_bytes()) {
            Err(LogError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn appender_syncs_incrementally() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut app = LogAppender::open(&path).unwrap();
        let log = vec![ended(1), ended(2), ended(3)];
        app.sync(&log[..1]).unwrap();
        app.sync(&log).unwrap();
        assert_eq!(app.written(), 3);
        assert_eq!(read_file(&path).unwrap(), log);
    }
}
