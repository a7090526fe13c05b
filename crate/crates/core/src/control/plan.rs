use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One sub-task of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub sub_task: String,
    pub sub_task_agent: String,
    pub bullet_points: Vec<String>,
}

impl PlanStep {
    pub fn new(sub_task: impl Into<String>, agent: impl Into<String>, bullets: &[&str]) -> Self {
        Self {
            sub_task: sub_task.into(),
            sub_task_agent: agent.into(),
            bullet_points: bullets.iter().map(|b| b.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn new(steps: Vec<PlanStep>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Human-readable rendering injected into agent prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "Step {}: {}\n  Agent: {}\n",
                i + 1,
                s.sub_task,
                s.sub_task_agent
            ));
            for b in &s.bullet_points {
                out.push_str(&format!("  - {b}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan has {found} steps, at most {max} allowed")]
    TooManySteps { found: usize, max: usize },
    #[error("plan has no steps")]
    EmptyPlan,
    #[error("step {step} is assigned to '{agent}', which is not an involved agent")]
    UnknownAgent { step: usize, agent: String },
    #[error("step {step} has an empty sub-task or no bullet points")]
    EmptyStep { step: usize },
    #[error("plan is not valid JSON: {0}")]
    Parse(String),
}

/// Checks step count, agent membership and bullet presence. Steps are reported 1-based.
pub fn validate_plan(
    plan: &Plan,
    max_steps: usize,
    involved: &BTreeSet<String>,
) -> Result<(), PlanError> {
    if plan.steps.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    if plan.steps.len() > max_steps {
        return Err(PlanError::TooManySteps {
            found: plan.steps.len(),
            max: max_steps,
        });
    }
    for (i, step) in plan.steps.iter().enumerate() {
        if !involved.contains(&step.sub_task_agent) {
            return Err(PlanError::UnknownAgent {
                step: i + 1,
                agent: step.sub_task_agent.clone(),
            });
        }
        let no_bullets = step.bullet_points.iter().all(|b| b.trim().is_empty());
        if step.sub_task.trim().is_empty() || no_bullets {
            return Err(PlanError::EmptyStep { step: i + 1 });
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanWire {
    Wrapped {
        #[serde(alias = "sub_tasks", alias = "plan")]
        steps: Vec<PlanStep>,
    },
    Bare(Vec<PlanStep>),
}

/// Extracts a plan from an LLM reply.
///
/// Looks at fenced code blocks first (in order), then at the outermost JSON
/// object or array in the raw text.
pub fn parse_plan(text: &str) -> Result<Plan, PlanError> {
    let mut candidates: Vec<String> = crate::analysis::extract_code_blocks(text)
        .into_iter()
        .map(|b| b.code)
        .collect();
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(a), Some(b)) = (text.find(open), text.rfind(close)) {
            if a < b {
                candidates.push(text[a..=b].to_string());
            }
        }
    }
    let mut last_err = String::from("no JSON found");
    for c in candidates {
        match serde_json::from_str::<PlanWire>(c.trim()) {
            Ok(PlanWire::Wrapped { steps }) | Ok(PlanWire::Bare(steps)) => {
                return Ok(Plan { steps })
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(PlanError::Parse(last_err))
}
