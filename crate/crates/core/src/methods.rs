//! Methods stage: one-shot prompt, or a researcher-only planned session.

use crate::control::{run_session, AgentSet, LlmStepAgent, OrchestratorConfig, SessionOutcome};
use crate::error::{Error, Result};
use crate::prompts;
use crate::runtime::Conversation;

pub const RESEARCHER: &str = "researcher";
pub const PLANNED_STEPS: usize = 4;
/// Soft bounds around the ~500-word target.
pub const WORD_RANGE: (usize, usize) = (300, 800);

fn require(input: &str, idea: &str) -> Result<()> {
    if input.trim().is_empty() {
        return Err(Error::Precondition("input text is empty".into()));
    }
    if idea.trim().is_empty() {
        return Err(Error::Precondition("idea is empty".into()));
    }
    Ok(())
}

/// Single completion with the fast-methods template.
pub fn generate_methods_fast(input: &str, idea: &str, convo: &mut Conversation<'_>) -> Result<String> {
    require(input, idea)?;
    let req = convo
        .runtime()
        .request_using(RESEARCHER, "methods_fast")
        .user(prompts::fast_methods(input, idea));
    let text = convo.ask(&req)?;
    if text.trim().is_empty() {
        return Err(Error::EmptySection("methods".into()));
    }
    Ok(text.trim().to_string())
}

pub fn planned_config() -> OrchestratorConfig {
    let mut cfg = OrchestratorConfig::with_agents([RESEARCHER]);
    cfg.n_steps = PLANNED_STEPS;
    cfg
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Planned mode; only the final step's output becomes the methodology.
pub fn generate_methods_planned(
    input: &str,
    idea: &str,
    convo: &mut Conversation<'_>,
    cfg: OrchestratorConfig,
) -> Result<(String, SessionOutcome)> {
    require(input, idea)?;
    let task = format!("Data description:\n{input}\n\nProject idea:\n{idea}");
    let mut agents =
        AgentSet::new().with(RESEARCHER, LlmStepAgent::new(RESEARCHER, prompts::METHODS_RESEARCHER));
    let outcome = run_session(convo, cfg, &task, prompts::METHODS_PLANNING, &mut agents)?;
    if !outcome.succeeded() {
        return Err(Error::Aborted(format!(
            "methods session ended with {:?}",
            outcome.abort_reason
        )));
    }
    let methods = outcome.final_output().unwrap_or_default().trim().to_string();
    if methods.is_empty() {
        return Err(Error::EmptySection("methods".into()));
    }
    let words = word_count(&methods);
    if words < WORD_RANGE.0 || words > WORD_RANGE.1 {
        convo.warn(format!(
            "methodology has {words} words, outside the expected {}-{} range",
            WORD_RANGE.0, WORD_RANGE.1
        ));
    }
    Ok((methods, outcome))
}
