//! Hosted chat-completion providers over their public HTTP contracts.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, ContentPart, Role, Usage};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub timeout: Duration,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(600),
        }
    }
}

fn client(settings: &HttpSettings) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(settings.timeout)
        .build()
        .map_err(|e| Error::Provider {
            status: None,
            message: e.to_string(),
            transient: false,
        })
}

/// Maps an HTTP failure onto the gateway error taxonomy.
pub(crate) fn classify_status(status: u16, body: &str, retry_after: Option<Duration>) -> Error {
    match status {
        401 | 403 => Error::Auth(format!("HTTP {status}: {}", truncate(body, 200))),
        429 => Error::RateLimited { retry_after },
        408 | 500..=599 => Error::Provider {
            status: Some(status),
            message: truncate(body, 500),
            transient: true,
        },
        _ => Error::Provider {
            status: Some(status),
            message: truncate(body, 500),
            transient: false,
        },
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn send(builder: reqwest::blocking::RequestBuilder, body: &Value) -> Result<Value> {
    let resp = builder.json(body).send().map_err(|e| Error::Provider {
        status: None,
        message: e.to_string(),
        transient: e.is_timeout() || e.is_connect() || e.is_request(),
    })?;
    let status = resp.status().as_u16();
    let retry_after = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs);
    let text = resp.text().map_err(|e| Error::Provider {
        status: Some(status),
        message: e.to_string(),
        transient: true,
    })?;
    if !(200..300).contains(&status) {
        return Err(classify_status(status, &text, retry_after));
    }
    serde_json::from_str(&text).map_err(|e| Error::Provider {
        status: Some(status),
        message: format!("invalid JSON body: {e}"),
        transient: false,
    })
}

fn malformed(what: &str) -> Error {
    Error::Provider {
        status: None,
        message: format!("response missing {what}"),
        transient: false,
    }
}

fn env_key(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

// ---------------------------------------------------------------------------
// OpenAI-compatible chat completions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    base_url: String,
    api_key: String,
    settings: HttpSettings,
}

impl OpenAiProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, settings: HttpSettings) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            settings,
        }
    }

    pub fn from_env(settings: HttpSettings) -> Option<Self> {
        let key = env_key("OPENAI_API_KEY")?;
        let base = env_key("OPENAI_BASE_URL").unwrap_or_else(|| "https://api.openai.com/v1".into());
        Some(Self::new(base, key, settings))
    }

    pub(crate) fn body(req: &ChatRequest) -> Value {
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { media_type, data } => json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{media_type};base64,{data}")}
                        }),
                    })
                    .collect();
                json!({"role": role, "content": content})
            })
            .collect();
        let reasoning = req.model.name.starts_with('o') || req.model.name.starts_with("gpt-5");
        let mut body = json!({"model": req.model.name, "messages": messages});
        if reasoning {
            body["max_completion_tokens"] = json!(req.max_tokens);
        } else {
            body["max_tokens"] = json!(req.max_tokens);
            if let Some(t) = req.temperature {
                body["temperature"] = json!(t);
            }
        }
        body
    }

    pub(crate) fn parse(v: &Value) -> Result<ChatResponse> {
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| malformed("choices[0].message.content"))?
            .to_string();
        let usage = Usage {
            input_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text, usage })
    }
}

impl ChatProvider for OpenAiProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let builder = client(&self.settings)?.post(url).bearer_auth(&self.api_key);
        Self::parse(&send(builder, &Self::body(req))?)
    }
}

// ---------------------------------------------------------------------------
// Anthropic messages API
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AnthropicProvider {
    base_url: String,
    api_key: String,
    settings: HttpSettings,
}

impl AnthropicProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, settings: HttpSettings) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            settings,
        }
    }

    pub fn from_env(settings: HttpSettings) -> Option<Self> {
        let key = env_key("ANTHROPIC_API_KEY")?;
        let base =
            env_key("ANTHROPIC_BASE_URL").unwrap_or_else(|| "https://api.anthropic.com/v1".into());
        Some(Self::new(base, key, settings))
    }

    pub(crate) fn body(req: &ChatRequest) -> Value {
        let system: Vec<String> = req
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content())
            .collect();
        let messages: Vec<Value> = req
            .messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| {
                let role = if m.role == Role::Assistant { "assistant" } else { "user" };
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { media_type, data } => json!({
                            "type": "image",
                            "source": {"type": "base64", "media_type": media_type, "data": data}
                        }),
                    })
                    .collect();
                json!({"role": role, "content": content})
            })
            .collect();
        let mut body = json!({
            "model": req.model.name,
            "max_tokens": req.max_tokens,
            "messages": messages,
        });
        if !system.is_empty() {
            body["system"] = json!(system.join("\n\n"));
        }
        if let Some(t) = req.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    pub(crate) fn parse(v: &Value) -> Result<ChatResponse> {
        let blocks = v["content"].as_array().ok_or_else(|| malformed("content"))?;
        let text = blocks
            .iter()
            .filter(|b| b["type"] == "text")
            .filter_map(|b| b["text"].as_str())
            .collect::<Vec<_>>()
            .join("");
        let usage = Usage {
            input_tokens: v["usage"]["input_tokens"].as_u64().unwrap_or(0),
            output_tokens: v["usage"]["output_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text, usage })
    }
}

impl ChatProvider for AnthropicProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let url = format!("{}/messages", self.base_url.trim_end_matches('/'));
        let builder = client(&self.settings)?
            .post(url)
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", "2023-06-01");
        Self::parse(&send(builder, &Self::body(req))?)
    }
}

// ---------------------------------------------------------------------------
// Google generateContent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GoogleProvider {
    base_url: String,
    api_key: String,
    settings: HttpSettings,
}

impl GoogleProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, settings: HttpSettings) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            settings,
        }
    }

    pub fn from_env(settings: HttpSettings) -> Option<Self> {
        let key = env_key("GOOGLE_API_KEY").or_else(|| env_key("GEMINI_API_KEY"))?;
        let base = env_key("GOOGLE_BASE_URL")
            .unwrap_or_else(|| "https://generativelanguage.googleapis.com/v1beta".into());
        Some(Self::new(base, key, settings))
    }

    pub(crate) fn body(req: &ChatRequest) -> Value {
        let system: Vec<String> = req
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content())
            .collect();
        let contents: Vec<Value> = req
            .messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| {
                let role = if m.role == Role::Assistant { "model" } else { "user" };
                let parts: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => json!({"text": text}),
                        ContentPart::Image { media_type, data } => json!({
                            "inline_data": {"mime_type": media_type, "data": data}
                        }),
                    })
                    .collect();
                json!({"role": role, "parts": parts})
            })
            .collect();
        let mut generation = json!({"maxOutputTokens": req.max_tokens});
        if let Some(t) = req.temperature {
            generation["temperature"] = json!(t);
        }
        let mut body = json!({"contents": contents, "generationConfig": generation});
        if !system.is_empty() {
            body["systemInstruction"] = json!({"parts": [{"text": system.join("\n\n")}]});
        }
        body
    }

    pub(crate) fn parse(v: &Value) -> Result<ChatResponse> {
        let parts = v["candidates"][0]["content"]["parts"]
            .as_array()
            .ok_or_else(|| malformed("candidates[0].content.parts"))?;
        let text = parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("");
        let usage = Usage {
            input_tokens: v["usageMetadata"]["promptTokenCount"].as_u64().unwrap_or(0),
            output_tokens: v["usageMetadata"]["candidatesTokenCount"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text, usage })
    }
}

impl ChatProvider for GoogleProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let url = format!(
            "{}/models/{}:generateContent",
            self.base_url.trim_end_matches('/'),
            req.model.name
        );
        let builder = client(&self.settings)?
            .post(url)
            .header("x-goog-api-key", &self.api_key);
        Self::parse(&send(builder, &Self::body(req))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{AgentMessage, ModelId, ProviderKind};

    fn req(provider: ProviderKind, name: &str) -> ChatRequest {
        ChatRequest::new(ModelId::new(provider, name).unwrap(), "reviewer")
            .system("be strict")
            .message(AgentMessage::text("user", Role::User, "page").with_image_png(b"abc"))
            .temperature(0.0)
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify_status(401, "", None), Error::Auth(_)));
        assert!(matches!(
            classify_status(429, "", Some(Duration::from_secs(3))),
            Error::RateLimited { retry_after: Some(d) } if d == Duration::from_secs(3)
        ));
        assert!(classify_status(503, "", None).is_transient());
        assert!(!classify_status(400, "", None).is_transient());
    }

    #[test]
    fn openai_body_carries_images_as_data_urls() {
        let body = OpenAiProvider::body(&req(ProviderKind::OpenAiCompatible, "gpt-4o"));
        assert_eq!(body["messages"][0]["role"], "system");
        let url = body["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["temperature"], 0.0);
        let o = OpenAiProvider::body(&req(ProviderKind::OpenAiCompatible, "o3-mini"));
        assert!(o.get("max_completion_tokens").is_some());
        assert!(o.get("temperature").is_none());
    }

    #[test]
    fn anthropic_body_lifts_system_prompt() {
        let body = AnthropicProvider::body(&req(ProviderKind::AnthropicCompatible, "claude-4.5"));
        assert_eq!(body["system"], "be strict");
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert_eq!(body["messages"][0]["content"][1]["source"]["type"], "base64");
    }

    #[test]
    fn google_body_uses_inline_data() {
        let body = GoogleProvider::body(&req(ProviderKind::GoogleCompatible, "gemini-2.5-pro"));
        assert_eq!(
            body["contents"][0]["parts"][1]["inline_data"]["mime_type"],
            "image/png"
        );
        assert_eq!(body["systemInstruction"]["parts"][0]["text"], "be strict");
    }

    #[test]
    fn response_parsing() {
        let o = OpenAiProvider::parse(&json!({
            "choices": [{"message": {"content": "hi"}}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 2}
        }))
        .unwrap();
        assert_eq!(o.text, "hi");
        assert_eq!(o.usage.total(), 7);
        let a = AnthropicProvider::parse(&json!({
            "content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}],
            "usage": {"input_tokens": 1, "output_tokens": 1}
        }))
        .unwrap();
        assert_eq!(a.text, "ab");
        let g = GoogleProvider::parse(&json!({
            "candidates": [{"content": {"parts": [{"text": "g"}]}}]
        }))
        .unwrap();
        assert_eq!(g.text, "g");
        assert!(OpenAiProvider::parse(&json!({})).is_err());
    }
}
