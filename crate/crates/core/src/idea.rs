//! Idea stage: maker/hater propose-critique loop, or a planned session.

use crate::control::{run_session, AgentSet, LlmStepAgent, OrchestratorConfig, SessionOutcome};
use crate::error::{Error, Result};
use crate::prompts;
use crate::runtime::Conversation;

pub const IDEA_MAKER: &str = "idea_maker";
pub const IDEA_HATER: &str = "idea_hater";

/// Maker/hater rounds before the final maker pass.
pub const FAST_ITERATIONS: usize = 3;

/// Steps of the planned-mode recipe.
pub const PLANNED_STEPS: usize = 6;

fn require_input(input: &str) -> Result<()> {
    if input.trim().is_empty() {
        return Err(Error::Precondition("input text is empty".into()));
    }
    Ok(())
}

/// Propose-critique loop: M,H,M,H,M,H,M. Returns the final maker text.
///
/// The maker always sees the input plus the latest idea and critique,
/// verbatim; nothing is summarized between rounds.
pub fn generate_idea_fast(input: &str, convo: &mut Conversation<'_>) -> Result<String> {
    require_input(input)?;
    let rt = convo.runtime();
    let mut idea = convo.ask(
        &rt.request_using(IDEA_MAKER, "idea_maker_fast")
            .system(prompts::IDEA_MAKER)
            .user(prompts::idea_maker_fast(input, None)),
    )?;
    for _ in 0..FAST_ITERATIONS {
        let critique = convo.ask(
            &rt.request_using(IDEA_HATER, "idea_hater_fast")
                .system(prompts::IDEA_HATER)
                .user(prompts::idea_hater_fast(input, &idea)),
        )?;
        idea = convo.ask(
            &rt.request_using(IDEA_MAKER, "idea_maker_fast")
                .system(prompts::IDEA_MAKER)
                .user(prompts::idea_maker_fast(input, Some((&idea, &critique)))),
        )?;
    }
    let idea = idea.trim().to_string();
    if idea.is_empty() {
        return Err(Error::EmptyIdea);
    }
    Ok(idea)
}

pub fn planned_config() -> OrchestratorConfig {
    let mut cfg = OrchestratorConfig::with_agents([IDEA_MAKER, IDEA_HATER]);
    cfg.n_steps = PLANNED_STEPS;
    cfg
}

/// Runs the six-step idea recipe under Planning & Control.
pub fn generate_idea_planned(
    input: &str,
    convo: &mut Conversation<'_>,
    cfg: OrchestratorConfig,
) -> Result<(String, SessionOutcome)> {
    require_input(input)?;
    let mut agents = AgentSet::new()
        .with(IDEA_MAKER, LlmStepAgent::new(IDEA_MAKER, prompts::IDEA_MAKER))
        .with(IDEA_HATER, LlmStepAgent::new(IDEA_HATER, prompts::IDEA_HATER));
    let outcome = run_session(convo, cfg, input, prompts::IDEA_PLANNING, &mut agents)?;
    if !outcome.succeeded() {
        return Err(Error::Aborted(format!(
            "idea session ended with {:?}",
            outcome.abort_reason
        )));
    }
    let idea = outcome.final_output().unwrap_or_default().trim().to_string();
    if idea.is_empty() {
        return Err(Error::EmptyIdea);
    }
    if !has_title_and_five_sentences(&idea) {
        convo.warn("final idea is not a title line followed by a 5-sentence description");
    }
    Ok((idea, outcome))
}

/// Splits prose into sentences on `.`, `!` or `?` followed by whitespace or end.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let end = matches!(c, '.' | '!' | '?')
            && chars.get(i + 1).map(|n| n.is_whitespace()).unwrap_or(true);
        if end {
            let s = cur.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            cur.clear();
        }
    }
    let rest = cur.trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

/// A non-empty first line followed by exactly five sentences.
pub fn has_title_and_five_sentences(idea: &str) -> bool {
    let mut lines = idea.trim().lines();
    let Some(title) = lines.next() else {
        return false;
    };
    if title.trim().is_empty() {
        return false;
    }
    let body: Vec<&str> = lines.collect();
    sentences(&body.join(" ")).len() == 5
}
