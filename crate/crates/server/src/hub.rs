//! Registry of live sessions and their schedulers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use csi_core::model::{validate_config, SessionConfig, SessionId};

use crate::actor::{Clock, SessionHandle, SystemClock};
use crate::error::ApiError;

#[derive(Clone)]
pub struct HubOptions {
    /// Where per-session directories are written; `None` keeps everything
    /// in memory.
    pub data_dir: Option<PathBuf>,
    /// Spawn a ticker per session at its `tick_interval`. Tests that drive
    /// ticks by hand turn this off.
    pub auto_tick: bool,
    pub clock: Arc<dyn Clock>,
}

impl Default for HubOptions {
    fn default() -> Self {
        Self {
            data_dir: None,
            auto_tick: true,
            clock: Arc::new(SystemClock::new()),
        }
    }
}

pub struct Hub {
    options: HubOptions,
    sessions: RwLock<BTreeMap<SessionId, SessionHandle>>,
    created: AtomicU64,
    connections: AtomicU64,
}

/// Keeps ids usable as directory names.
fn id_prefix(requested: &str) -> String {
    let clean: String = requested
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '-' || *c == '_')
        .take(40)
        .collect();
    if clean.is_empty() {
        "session".into()
    } else {
        clean
    }
}

impl Hub {
    pub fn new(options: HubOptions) -> Arc<Self> {
        Arc::new(Self {
            options,
            sessions: RwLock::new(BTreeMap::new()),
            created: AtomicU64::new(0),
            connections: AtomicU64::new(0),
        })
    }

    /// Creates a session in the lobby. Every call yields a fresh id of the
    /// form `<requested>-<n>`, so repeated creates never collide.
    pub fn create(self: &Arc<Self>, mut config: SessionConfig) -> Result<SessionHandle, ApiError> {
        let violations = validate_config(&config);
        if !violations.is_empty() {
            return Err(ApiError::Invalid(violations));
        }
        let prefix = id_prefix(config.session_id.as_str());
        if let Some(root) = &self.options.data_dir {
            std::fs::create_dir_all(root).map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        // Ids left on disk by an earlier process are skipped, so a restart
        // never appends to another session's log.
        let dir = loop {
            let n = self.created.fetch_add(1, Ordering::SeqCst) + 1;
            config.session_id = SessionId::new(format!("{prefix}-{n:04}"));
            let Some(root) = &self.options.data_dir else {
                break None;
            };
            let dir = root.join(config.session_id.as_str());
            match std::fs::create_dir(&dir) {
                Ok(()) => break Some(dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(ApiError::Internal(e.to_string())),
            }
        };
        let tick = Duration::from_secs(config.tick_interval.max(1));
        let handle = SessionHandle::spawn(config, Arc::clone(&self.options.clock), dir)?;
        self.sessions
            .write()
            .expect("session registry lock")
            .insert(handle.id().clone(), handle.clone());
        if self.options.auto_tick {
            let ticker = handle.clone();
            tokio::spawn(async move {
                let mut interval = tokio::time::interval(tick);
                interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
                loop {
                    interval.tick().await;
                    if !ticker.tick_nowait() {
                        break;
                    }
                }
            });
        }
        tracing::info!(session = %handle.id(), "session created");
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .expect("session registry lock")
            .get(&SessionId::new(id))
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_owned()))
    }

    pub fn ids(&self) -> Vec<SessionId> {
        self.sessions
            .read()
            .expect("session registry lock")
            .keys()
            .cloned()
            .collect()
    }

    /// A process-unique id for one participant connection.
    pub fn next_connection(&self) -> u64 {
        self.connections.fetch_add(1, Ordering::SeqCst) + 1
    }
}
