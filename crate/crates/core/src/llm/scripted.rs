//! Deterministic provider driven by an ordered rule list.
//!
//! Script files are JSON:
//!
//! ```json
//! {
//!   "strict": true,
//!   "rules": [
//!     { "agent": "idea_maker", "response": "first idea" },
//!     { "agent": "idea_hater", "contains": "first idea", "response": "too vague" },
//!     { "response": "fallback for anyone", "repeat": true }
//!   ]
//! }
//! ```
//!
//! A request is answered by the first rule, in file order, that still has uses
//! left and whose matcher accepts it. Rules fire once unless `repeat` is set.
//! With `strict` an unmatched request is [`Error::ScriptExhausted`]; otherwise
//! it gets `default_response`.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, Usage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    /// Requesting agent name must equal this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// Request text must contain this substring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Request text must not contain this substring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excludes: Option<String>,
}

impl Matcher {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn agent(name: impl Into<String>) -> Self {
        Self {
            agent: Some(name.into()),
            ..Self::default()
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    pub fn excluding(mut self, needle: impl Into<String>) -> Self {
        self.excludes = Some(needle.into());
        self
    }

    pub fn matches(&self, req: &ChatRequest) -> bool {
        if let Some(agent) = &self.agent {
            if &req.agent != agent {
                return false;
            }
        }
        if self.contains.is_none() && self.excludes.is_none() {
            return true;
        }
        let text = req.text();
        if let Some(needle) = &self.contains {
            if !text.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.excludes {
            if text.contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: String,
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptRule {
    pub fn once(matcher: Matcher, response: impl Into<String>) -> Self {
        Self {
            matcher,
            response: response.into(),
            repeat: false,
        }
    }

    pub fn always(matcher: Matcher, response: impl Into<String>) -> Self {
        Self {
            matcher,
            response: response.into(),
            repeat: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default)]
    pub default_response: Option<String>,
    pub rules: Vec<ScriptRule>,
}

fn default_strict() -> bool {
    true
}

#[derive(Debug)]
struct ScriptState {
    rules: Vec<ScriptRule>,
    used: Vec<bool>,
    captured: Vec<ChatRequest>,
}

#[derive(Debug)]
pub struct ScriptedProvider {
    strict: bool,
    default_response: String,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn strict(rules: Vec<ScriptRule>) -> Self {
        Self::build(true, rules, None)
    }

    pub fn lenient(rules: Vec<ScriptRule>, default_response: impl Into<String>) -> Self {
        Self::build(false, rules, Some(default_response.into()))
    }

    fn build(strict: bool, rules: Vec<ScriptRule>, default_response: Option<String>) -> Self {
        let used = vec![false; rules.len()];
        Self {
            strict,
            default_response: default_response.unwrap_or_else(|| "OK".into()),
            state: Mutex::new(ScriptState {
                rules,
                used,
                captured: Vec::new(),
            }),
        }
    }

    pub fn from_script(script: ScriptFile) -> Self {
        Self::build(script.strict, script.rules, script.default_response)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(Self::from_script(serde_json::from_str(json)?))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Appends rules after the existing ones.
    pub fn push(&self, rule: ScriptRule) {
        let mut st = self.lock();
        st.rules.push(rule);
        st.used.push(false);
    }

    /// Every request seen so far, in arrival order.
    pub fn captured(&self) -> Vec<ChatRequest> {
        self.lock().captured.clone()
    }

    pub fn captured_for(&self, agent: &str) -> Vec<ChatRequest> {
        self.lock()
            .captured
            .iter()
            .filter(|r| r.agent == agent)
            .cloned()
            .collect()
    }

    pub fn call_count(&self) -> usize {
        self.lock().captured.len()
    }

    /// Number of non-repeating rules that have not fired yet.
    pub fn pending(&self) -> usize {
        let st = self.lock();
        st.rules
            .iter()
            .zip(&st.used)
            .filter(|(r, used)| !r.repeat && !**used)
            .count()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let mut st = self.lock();
        st.captured.push(req.clone());
        let hit = st
            .rules
            .iter()
            .enumerate()
            .position(|(i, r)| (r.repeat || !st.used[i]) && r.matcher.matches(req));
        let text = match hit {
            Some(i) => {
                st.used[i] = true;
                st.rules[i].response.clone()
            }
            None if self.strict => {
                return Err(Error::ScriptExhausted {
                    agent: req.agent.clone(),
                })
            }
            None => self.default_response.clone(),
        };
        Ok(ChatResponse {
            usage: Usage {
                input_tokens: word_count(&req.text()),
                output_tokens: word_count(&text),
            },
            text,
        })
    }
}
