//! Shared execution context for stage runs.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::clock::{Clock, SystemClock};
use crate::error::{Error, Result};
use crate::events::{EventSink, NullSink, RunEvent};
use crate::llm::{AgentMessage, AgentModels, ChatRequest, ChatResponse, Gateway, Role, Usage};
use crate::project::{ProjectDir, TranscriptEntry};

/// Cooperative cancellation shared between a run and whoever started it.
#[derive(Debug, Clone, Default)]
pub struct CancelFlag(Arc<AtomicBool>);

impl CancelFlag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub fn check(&self) -> Result<()> {
        if self.is_cancelled() {
            Err(Error::Interrupted)
        } else {
            Ok(())
        }
    }
}

/// Everything an agent turn needs besides its prompt.
#[derive(Clone)]
pub struct Runtime {
    pub gateway: Arc<Gateway>,
    pub models: AgentModels,
    pub clock: Arc<dyn Clock>,
    pub events: Arc<dyn EventSink>,
    pub cancel: CancelFlag,
    pub temperature: Option<f32>,
    pub max_tokens: u32,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("gateway", &self.gateway)
            .field("models", &self.models)
            .finish_non_exhaustive()
    }
}

impl Runtime {
    pub fn new(gateway: Arc<Gateway>, models: AgentModels) -> Self {
        Self {
            gateway,
            models,
            clock: Arc::new(SystemClock),
            events: Arc::new(NullSink),
            cancel: CancelFlag::new(),
            temperature: None,
            max_tokens: crate::llm::DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_events(mut self, events: Arc<dyn EventSink>) -> Self {
        self.events = events;
        self
    }

    pub fn with_cancel(mut self, cancel: CancelFlag) -> Self {
        self.cancel = cancel;
        self
    }

    pub fn with_temperature(mut self, t: Option<f32>) -> Self {
        self.temperature = t;
        self
    }

    /// Empty request for `agent`, with the model and sampling settings filled in.
    pub fn request(&self, agent: &str) -> ChatRequest {
        let mut req = ChatRequest::new(self.models.for_agent(agent), agent);
        req.temperature = self.temperature;
        req.max_tokens = self.max_tokens;
        req
    }

    /// Like [`Runtime::request`], but picks the model configured for `model_key`.
    pub fn request_using(&self, agent: &str, model_key: &str) -> ChatRequest {
        let mut req = self.request(agent);
        req.model = self.models.for_agent(model_key);
        req
    }
}

/// Records the turns of one stage: in memory, in the project transcript, and as events.
pub struct Conversation<'a> {
    rt: &'a Runtime,
    project: Option<&'a ProjectDir>,
    stage: String,
    messages: Vec<AgentMessage>,
    warnings: Vec<String>,
    usage: Usage,
}

impl<'a> Conversation<'a> {
    pub fn new(rt: &'a Runtime, project: Option<&'a ProjectDir>, stage: impl Into<String>) -> Self {
        Self {
            rt,
            project,
            stage: stage.into(),
            messages: Vec::new(),
            warnings: Vec::new(),
            usage: Usage::default(),
        }
    }

    pub fn runtime(&self) -> &'a Runtime {
        self.rt
    }

    pub fn project(&self) -> Option<&'a ProjectDir> {
        self.project
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn messages(&self) -> &[AgentMessage] {
        &self.messages
    }

    pub fn into_messages(self) -> Vec<AgentMessage> {
        self.messages
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn usage(&self) -> Usage {
        self.usage
    }

    /// Raw completion; nothing is recorded.
    pub fn complete(&mut self, req: &ChatRequest) -> Result<ChatResponse> {
        self.rt.cancel.check()?;
        let resp = if req.image_count() > 0 {
            self.rt.gateway.complete_multimodal(req)?
        } else {
            self.rt.gateway.complete(req)?
        };
        self.usage += resp.usage;
        Ok(resp)
    }

    /// Completes `req` and records the reply as a main-transcript turn.
    pub fn ask(&mut self, req: &ChatRequest) -> Result<String> {
        let resp = self.complete(req)?;
        let mut msg = AgentMessage::text(req.agent.clone(), Role::Assistant, resp.text.clone());
        msg.usage = Some(resp.usage);
        self.record(msg)?;
        Ok(resp.text)
    }

    /// Stamps and appends a main-transcript message.
    pub fn record(&mut self, mut msg: AgentMessage) -> Result<()> {
        msg.timestamp = self.rt.clock.now();
        self.log(&msg, 0)?;
        self.messages.push(msg);
        Ok(())
    }

    /// Logs a message of a nested exchange; it never enters the main transcript.
    pub fn record_nested(&mut self, mut msg: AgentMessage) -> Result<()> {
        msg.timestamp = self.rt.clock.now();
        self.log(&msg, 1)
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(stage = %self.stage, "{message}");
        self.rt.events.emit(RunEvent::Warning {
            stage: self.stage.clone(),
            message: message.clone(),
        });
        self.warnings.push(message);
    }

    pub fn emit(&self, event: RunEvent) {
        self.rt.events.emit(event);
    }

    /// Persists a JSON snapshot under `sessions/` when a project is attached.
    pub fn snapshot(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        if let Some(p) = self.project {
            let bytes = serde_json::to_vec_pretty(value)?;
            p.write_aux(&format!("sessions/{name}.json"), &bytes)?;
        }
        Ok(())
    }

    fn log(&self, msg: &AgentMessage, depth: u8) -> Result<()> {
        if let Some(p) = self.project {
            p.append_transcript(&TranscriptEntry {
                stage: self.stage.clone(),
                depth,
                message: msg.redacted(),
            })?;
        }
        self.rt.events.emit(RunEvent::AgentTurn {
            stage: self.stage.clone(),
            agent: msg.agent.clone(),
            depth,
            text: msg.content(),
        });
        Ok(())
    }
}
