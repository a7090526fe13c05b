use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Progress notifications emitted while a stage runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunEvent {
    StageStarted { stage: String },
    AgentTurn { stage: String, agent: String, depth: u8, text: String },
    ExecOutput { stage: String, stream: String, chunk: String },
    Warning { stage: String, message: String },
    StageDone { stage: String },
    StageFailed { stage: String, error: String },
    StageSkipped { stage: String, reason: String },
}

impl RunEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            RunEvent::StageStarted { .. } => "stage_started",
            RunEvent::AgentTurn { .. } => "agent_turn",
            RunEvent::ExecOutput { .. } => "exec_output",
            RunEvent::Warning { .. } => "warning",
            RunEvent::StageDone { .. } => "stage_done",
            RunEvent::StageFailed { .. } => "stage_failed",
            RunEvent::StageSkipped { .. } => "stage_skipped",
        }
    }
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: RunEvent);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: RunEvent) {}
}

/// Keeps every event in memory.
#[derive(Debug, Default)]
pub struct CollectingSink {
    events: Mutex<Vec<RunEvent>>,
}

impl CollectingSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<RunEvent> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl EventSink for CollectingSink {
    fn emit(&self, event: RunEvent) {
        self.events
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(event);
    }
}

impl<F> EventSink for F
where
    F: Fn(RunEvent) + Send + Sync,
{
    fn emit(&self, event: RunEvent) {
        self(event)
    }
}
