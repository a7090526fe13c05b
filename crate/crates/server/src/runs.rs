//! In-memory run registry with a replayable event log per run.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::sync::watch;
use uuid::Uuid;

use sciweave_core::events::{EventSink, RunEvent};
use sciweave_core::runtime::CancelFlag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
    Interrupted,
}

/// One event as delivered to clients; `seq` starts at 0 per run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub seq: u64,
    pub kind: String,
    pub data: serde_json::Value,
}

#[derive(Debug)]
struct Log {
    events: Vec<Envelope>,
    status: RunStatus,
    error: Option<String>,
    finished_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub id: Uuid,
    pub project: String,
    pub target: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub events: usize,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

pub struct Run {
    pub id: Uuid,
    pub project: String,
    pub target: String,
    pub cancel: CancelFlag,
    pub started_at: DateTime<Utc>,
    log: Mutex<Log>,
    // bumped on every append; subscribers wait on it
    tick: watch::Sender<u64>,
}

impl Run {
    fn log(&self) -> MutexGuard<'_, Log> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn append(&self, kind: &str, data: serde_json::Value) {
        push(&mut self.log(), kind, data);
        self.tick.send_modify(|t| *t += 1);
    }

    /// Sets the final status. The closing `run_finished` event is appended
    /// under the same lock, so readers never see a finished run without it.
    pub fn finish(&self, status: RunStatus, error: Option<String>) {
        {
            let mut log = self.log();
            if log.status != RunStatus::Running {
                return;
            }
            log.status = status;
            log.error = error.clone();
            log.finished_at = Some(Utc::now());
            push(&mut log, "run_finished", serde_json::json!({ "status": status, "error": error }));
        }
        self.tick.send_modify(|t| *t += 1);
    }

    /// Events from `from` on, and whether the run has finished.
    pub fn events_from(&self, from: usize) -> (Vec<Envelope>, bool) {
        let log = self.log();
        let batch = log.events.get(from..).map(<[_]>::to_vec).unwrap_or_default();
        (batch, log.status != RunStatus::Running)
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.tick.subscribe()
    }

    pub fn info(&self) -> RunInfo {
        let log = self.log();
        RunInfo {
            id: self.id,
            project: self.project.clone(),
            target: self.target.clone(),
            status: log.status,
            error: log.error.clone(),
            events: log.events.len(),
            started_at: self.started_at,
            finished_at: log.finished_at,
        }
    }

    pub fn status(&self) -> RunStatus {
        self.log().status
    }
}

fn push(log: &mut Log, kind: &str, data: serde_json::Value) {
    let seq = log.events.len() as u64;
    log.events.push(Envelope {
        seq,
        kind: kind.to_string(),
        data,
    });
}

/// Forwards engine events into a run's log.
pub struct RunSink(pub Arc<Run>);

impl EventSink for RunSink {
    fn emit(&self, event: RunEvent) {
        let data = serde_json::to_value(&event).unwrap_or(serde_json::Value::Null);
        self.0.append(event.kind(), data);
    }
}

#[derive(Default)]
pub struct Registry {
    runs: Mutex<HashMap<Uuid, Arc<Run>>>,
    // project name -> active run
    active: Mutex<HashMap<String, Uuid>>,
    idle: tokio::sync::Notify,
}

impl Registry {
    /// Registers a new run unless the project already has one.
    pub fn start(&self, project: &str, target: &str) -> Option<Arc<Run>> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        if active.contains_key(project) {
            return None;
        }
        let (tick, _) = watch::channel(0);
        let run = Arc::new(Run {
            id: Uuid::new_v4(),
            project: project.to_string(),
            target: target.to_string(),
            cancel: CancelFlag::new(),
            started_at: Utc::now(),
            log: Mutex::new(Log {
                events: Vec::new(),
                status: RunStatus::Running,
                error: None,
                finished_at: None,
            }),
            tick,
        });
        active.insert(project.to_string(), run.id);
        self.runs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(run.id, run.clone());
        Some(run)
    }

    pub fn release(&self, run: &Run) {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        if active.get(&run.project) == Some(&run.id) {
            active.remove(&run.project);
        }
        if active.is_empty() {
            self.idle.notify_waiters();
        }
    }

    pub fn get(&self, id: &Uuid) -> Option<Arc<Run>> {
        self.runs.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn active_for(&self, project: &str) -> Option<Arc<Run>> {
        let id = *self.active.lock().unwrap_or_else(|e| e.into_inner()).get(project)?;
        self.get(&id)
    }

    pub fn list(&self, project: Option<&str>) -> Vec<RunInfo> {
        let mut out: Vec<RunInfo> = self
            .runs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .filter(|r| project.is_none_or(|p| r.project == p))
            .map(|r| r.info())
            .collect();
        out.sort_by_key(|r| r.started_at);
        out
    }

    pub fn active(&self) -> Vec<Arc<Run>> {
        let ids: Vec<Uuid> = self
            .active
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .copied()
            .collect();
        ids.iter().filter_map(|id| self.get(id)).collect()
    }

    /// Waits until no run is active.
    pub async fn wait_idle(&self) {
        loop {
            let notified = self.idle.notified();
            if self.active.lock().unwrap_or_else(|e| e.into_inner()).is_empty() {
                return;
            }
            notified.await;
        }
    }
}
