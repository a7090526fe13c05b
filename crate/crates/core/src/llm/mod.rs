//! Uniform chat-completion port.
//!
//! Every agent turn in the pipeline goes through [`Gateway::complete`]. The
//! gateway validates the request against the [`ModelRegistry`], routes it to
//! the provider registered for the model's [`ProviderKind`], retries transient
//! failures with capped exponential backoff, and keeps running token totals.

mod http;
mod scripted;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use http::{AnthropicProvider, GoogleProvider, HttpSettings, OpenAiProvider};
pub use scripted::{Matcher, ScriptFile, ScriptRule, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    OpenAiCompatible,
    GoogleCompatible,
    AnthropicCompatible,
    Scripted,
}

impl ProviderKind {
    /// Environment variable holding the credential for this provider.
    pub fn key_env(self) -> Option<&'static str> {
        match self {
            ProviderKind::OpenAiCompatible => Some("OPENAI_API_KEY"),
            ProviderKind::GoogleCompatible => Some("GOOGLE_API_KEY"),
            ProviderKind::AnthropicCompatible => Some("ANTHROPIC_API_KEY"),
            ProviderKind::Scripted => None,
        }
    }

    pub const HOSTED: [ProviderKind; 3] = [
        ProviderKind::OpenAiCompatible,
        ProviderKind::GoogleCompatible,
        ProviderKind::AnthropicCompatible,
    ];
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProviderKind::OpenAiCompatible => "openai",
            ProviderKind::GoogleCompatible => "google",
            ProviderKind::AnthropicCompatible => "anthropic",
            ProviderKind::Scripted => "scripted",
        };
        f.write_str(s)
    }
}

impl FromStr for ProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "openai" | "open_ai_compatible" => Ok(ProviderKind::OpenAiCompatible),
            "google" | "gemini" | "google_compatible" => Ok(ProviderKind::GoogleCompatible),
            "anthropic" | "claude" | "anthropic_compatible" => {
                Ok(ProviderKind::AnthropicCompatible)
            }
            "scripted" => Ok(ProviderKind::Scripted),
            other => Err(Error::InvalidRequest(format!("unknown provider '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelId {
    pub provider: ProviderKind,
    pub name: String,
}

impl ModelId {
    pub fn new(provider: ProviderKind, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidRequest("model name must be non-empty".into()));
        }
        Ok(Self { provider, name })
    }

    pub fn scripted() -> Self {
        Self {
            provider: ProviderKind::Scripted,
            name: "scripted".into(),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.provider, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: ModelId,
    pub multimodal: bool,
}

/// Known models, keyed by name.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    models: BTreeMap<String, ModelInfo>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }

    /// The stock model list plus the two scripted test models.
    pub fn builtin() -> Self {
        use ProviderKind::*;
        let table: &[(ProviderKind, &str, bool)] = &[
            (OpenAiCompatible, "gpt-5", true),
            (OpenAiCompatible, "gpt-5-mini", true),
            (OpenAiCompatible, "gpt-4o", true),
            (OpenAiCompatible, "gpt-4.1", true),
            (OpenAiCompatible, "gpt-4.1-mini", true),
            (OpenAiCompatible, "o3-mini", false),
            (GoogleCompatible, "gemini-2.5-pro", true),
            (GoogleCompatible, "gemini-2.5-flash", true),
            (GoogleCompatible, "gemini-2.0-flash", true),
            (AnthropicCompatible, "claude-3-7-sonnet", true),
            (AnthropicCompatible, "claude-4-Opus", true),
            (AnthropicCompatible, "claude-4.1-Opus", true),
            (AnthropicCompatible, "claude-4.5", true),
            (Scripted, "scripted", true),
            (Scripted, "scripted-text", false),
        ];
        let mut reg = Self::empty();
        for (provider, name, multimodal) in table {
            reg.register(ModelInfo {
                id: ModelId {
                    provider: *provider,
                    name: (*name).to_string(),
                },
                multimodal: *multimodal,
            });
        }
        reg
    }

    pub fn register(&mut self, info: ModelInfo) {
        self.models.insert(info.id.name.clone(), info);
    }

    pub fn get(&self, name: &str) -> Option<&ModelInfo> {
        self.models.get(name)
    }

    /// Looks up `name`, or registers `provider:name` on the fly.
    pub fn resolve(&mut self, spec: &str) -> Result<ModelId> {
        if let Some(info) = self.models.get(spec) {
            return Ok(info.id.clone());
        }
        match spec.split_once(':') {
            Some((provider, name)) => {
                let id = ModelId::new(provider.parse()?, name)?;
                if let Some(info) = self.models.get(name) {
                    if info.id == id {
                        return Ok(id);
                    }
                }
                self.register(ModelInfo {
                    id: id.clone(),
                    multimodal: true,
                });
                Ok(id)
            }
            None => Err(Error::UnknownModel(spec.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelInfo> {
        self.models.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    /// Base64 payload. Transcripts store a digest in place of the payload.
    Image { media_type: String, data: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, o: Usage) -> Usage {
        Usage {
            input_tokens: self.input_tokens + o.input_tokens,
            output_tokens: self.output_tokens + o.output_tokens,
        }
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        *self = *self + o;
    }
}

/// One turn: who spoke, in which role, and what they said.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub agent: String,
    pub role: Role,
    pub parts: Vec<ContentPart>,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl AgentMessage {
    pub fn text(agent: impl Into<String>, role: Role, text: impl Into<String>) -> Self {
        Self {
            agent: agent.into(),
            role,
            parts: vec![ContentPart::Text { text: text.into() }],
            timestamp: DateTime::<Utc>::default(),
            usage: None,
        }
    }

    pub fn with_image_png(mut self, png: &[u8]) -> Self {
        self.parts.push(ContentPart::Image {
            media_type: "image/png".into(),
            data: base64::engine::general_purpose::STANDARD.encode(png),
        });
        self
    }

    pub fn with_image(mut self, media_type: &str, bytes: &[u8]) -> Self {
        self.parts.push(ContentPart::Image {
            media_type: media_type.to_string(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        });
        self
    }

    /// Concatenation of all text parts.
    pub fn content(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            if let ContentPart::Text { text } = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }

    /// Copy with image payloads replaced by `sha256:<hex>` digests.
    pub fn redacted(&self) -> Self {
        let mut m = self.clone();
        for part in &mut m.parts {
            if let ContentPart::Image { data, .. } = part {
                let digest = Sha256::digest(data.as_bytes());
                *data = format!("sha256:{}", hex::encode(digest));
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: ModelId,
    /// Name of the agent issuing the request; used for routing scripted rules and logs.
    pub agent: String,
    pub messages: Vec<AgentMessage>,
    pub max_tokens: u32,
    /// `None` leaves the provider default in place.
    pub temperature: Option<f32>,
}

pub const DEFAULT_MAX_TOKENS: u32 = 8192;

impl ChatRequest {
    pub fn new(model: ModelId, agent: impl Into<String>) -> Self {
        Self {
            model,
            agent: agent.into(),
            messages: Vec::new(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: None,
        }
    }

    pub fn system(mut self, text: impl Into<String>) -> Self {
        let agent = self.agent.clone();
        self.messages
            .push(AgentMessage::text(agent, Role::System, text));
        self
    }

    pub fn user(mut self, text: impl Into<String>) -> Self {
        self.messages.push(AgentMessage::text("user", Role::User, text));
        self
    }

    pub fn message(mut self, m: AgentMessage) -> Self {
        self.messages.push(m);
        self
    }

    pub fn temperature(mut self, t: f32) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(AgentMessage::image_count).sum()
    }

    /// All text in the request, in message order.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(AgentMessage::content)
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validate(&self) -> Result<()> {
        if self.model.name.trim().is_empty() {
            return Err(Error::InvalidRequest("model name must be non-empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest("max_tokens must be positive".into()));
        }
        if let Some(t) = self.temperature {
            if !(t >= 0.0) {
                return Err(Error::InvalidRequest(format!(
                    "temperature must be >= 0, got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before attempt `attempt + 1`, given the `attempt`-th failure (1-based).
    pub fn delay(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        let backoff = self.base_delay.saturating_mul(factor).min(self.max_delay);
        match hint {
            Some(h) => h.min(self.max_delay).max(backoff),
            None => backoff,
        }
    }
}

#[derive(Default)]
struct Throttle {
    min_interval: Option<Duration>,
    last: HashMap<ProviderKind, Instant>,
}

pub struct Gateway {
    registry: ModelRegistry,
    providers: HashMap<ProviderKind, Arc<dyn ChatProvider>>,
    retry: RetryPolicy,
    throttle: Mutex<Throttle>,
    usage: Mutex<Usage>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(registry: ModelRegistry) -> Self {
        Self {
            registry,
            providers: HashMap::new(),
            retry: RetryPolicy::default(),
            throttle: Mutex::new(Throttle::default()),
            usage: Mutex::new(Usage::default()),
        }
    }

    /// A gateway whose only backend is `provider`, with no retry delays.
    pub fn scripted(provider: Arc<ScriptedProvider>) -> Self {
        Self::new(ModelRegistry::builtin())
            .with_provider(ProviderKind::Scripted, provider)
            .with_retry(RetryPolicy::immediate(1))
    }

    /// Registers HTTP providers for every hosted provider whose key is set.
    pub fn from_env() -> Self {
        let mut gw = Self::new(ModelRegistry::builtin());
        let settings = HttpSettings::default();
        if let Some(p) = OpenAiProvider::from_env(settings.clone()) {
            gw = gw.with_provider(ProviderKind::OpenAiCompatible, Arc::new(p));
        }
        if let Some(p) = GoogleProvider::from_env(settings.clone()) {
            gw = gw.with_provider(ProviderKind::GoogleCompatible, Arc::new(p));
        }
        if let Some(p) = AnthropicProvider::from_env(settings) {
            gw = gw.with_provider(ProviderKind::AnthropicCompatible, Arc::new(p));
        }
        gw
    }

    pub fn with_provider(mut self, kind: ProviderKind, provider: Arc<dyn ChatProvider>) -> Self {
        self.providers.insert(kind, provider);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Minimum spacing between consecutive calls to the same provider.
    pub fn with_throttle(self, min_interval: Duration) -> Self {
        self.throttle.lock().unwrap_or_else(|e| e.into_inner()).min_interval =
            Some(min_interval);
        self
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ModelRegistry {
        &mut self.registry
    }

    pub fn has_provider(&self, kind: ProviderKind) -> bool {
        self.providers.contains_key(&kind)
    }

    /// Running token totals across every call made through this gateway.
    pub fn usage(&self) -> Usage {
        *self.usage.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        req.validate()?;
        let info = self
            .registry
            .get(&req.model.name)
            .ok_or_else(|| Error::UnknownModel(req.model.name.clone()))?;
        if req.image_count() > 0 && !info.multimodal {
            return Err(Error::UnsupportedModality(req.model.name.clone()));
        }
        let provider = self.providers.get(&req.model.provider).ok_or_else(|| {
            Error::Auth(format!(
                "no credentials configured for provider '{}'",
                req.model.provider
            ))
        })?;

        let mut attempt = 0;
        loop {
            attempt += 1;
            self.wait_turn(req.model.provider);
            match provider.complete(req) {
                Ok(resp) => {
                    *self.usage.lock().unwrap_or_else(|e| e.into_inner()) += resp.usage;
                    return Ok(resp);
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    let hint = match &e {
                        Error::RateLimited { retry_after } => *retry_after,
                        _ => None,
                    };
                    let delay = self.retry.delay(attempt, hint);
                    tracing::warn!(agent = %req.agent, attempt, ?delay, error = %e, "transient provider failure, retrying");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Same contract as [`Gateway::complete`] but the model must accept images.
    pub fn complete_multimodal(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let multimodal = self
            .registry
            .get(&req.model.name)
            .map(|m| m.multimodal)
            .ok_or_else(|| Error::UnknownModel(req.model.name.clone()))?;
        if !multimodal {
            return Err(Error::UnsupportedModality(req.model.name.clone()));
        }
        self.complete(req)
    }

    fn wait_turn(&self, kind: ProviderKind) {
        let mut t = self.throttle.lock().unwrap_or_else(|e| e.into_inner());
        let Some(min) = t.min_interval else { return };
        if let Some(last) = t.last.get(&kind) {
            let elapsed = last.elapsed();
            if elapsed < min {
                std::thread::sleep(min - elapsed);
            }
        }
        t.last.insert(kind, Instant::now());
    }
}

/// Which model each agent role uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentModels {
    default: ModelId,
    overrides: BTreeMap<String, ModelId>,
}

impl Default for AgentModels {
    fn default() -> Self {
        Self::stock()
    }
}

impl AgentModels {
    /// Stock choices: coding agents on gemini-2.5-pro / gpt-4.1, critique on Claude.
    pub fn stock() -> Self {
        use ProviderKind::*;
        let m = |p: ProviderKind, n: &str| ModelId {
            provider: p,
            name: n.to_string(),
        };
        let table = [
            ("idea_maker", m(OpenAiCompatible, "gpt-4o")),
            ("idea_hater", m(AnthropicCompatible, "claude-3-7-sonnet")),
            ("idea_maker_fast", m(GoogleCompatible, "gemini-2.0-flash")),
            ("idea_hater_fast", m(GoogleCompatible, "gemini-2.0-flash")),
            ("planner", m(OpenAiCompatible, "gpt-4.1")),
            ("plan_reviewer", m(AnthropicCompatible, "claude-3-7-sonnet")),
            ("researcher", m(GoogleCompatible, "gemini-2.5-pro")),
            ("engineer", m(GoogleCompatible, "gemini-2.5-pro")),
            ("methods_fast", m(GoogleCompatible, "gemini-2.5-flash")),
            ("novelty", m(GoogleCompatible, "gemini-2.5-flash")),
            ("literature_summary", m(GoogleCompatible, "gemini-2.5-flash")),
            ("summarizer", m(OpenAiCompatible, "o3-mini")),
            ("keyword_selector", m(OpenAiCompatible, "gpt-4.1")),
            ("paper_writer", m(GoogleCompatible, "gemini-2.5-flash")),
            ("caption_writer", m(GoogleCompatible, "gemini-2.5-flash")),
            ("latex_fixer", m(GoogleCompatible, "gemini-2.5-flash")),
            ("reviewer", m(GoogleCompatible, "gemini-2.5-pro")),
        ];
        Self {
            default: m(GoogleCompatible, "gemini-2.5-flash"),
            overrides: table
                .into_iter()
                .map(|(a, id)| (a.to_string(), id))
                .collect(),
        }
    }

    /// Every agent uses `model`.
    pub fn uniform(model: ModelId) -> Self {
        Self {
            default: model,
            overrides: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, agent: impl Into<String>, model: ModelId) {
        self.overrides.insert(agent.into(), model);
    }

    pub fn for_agent(&self, agent: &str) -> ModelId {
        self.overrides
            .get(agent)
            .cloned()
            .unwrap_or_else(|| self.default.clone())
    }
}
