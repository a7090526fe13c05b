use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::plan::Plan;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    /// Reviewer/planner recommendation rounds during planning.
    pub n_reviews: usize,
    /// Upper bound on plan length.
    pub n_steps: usize,
    /// Failed executions tolerated per session before aborting.
    pub n_fails: usize,
    /// Hard cap on messages exchanged in a session, terminator included.
    pub n_rounds: usize,
    pub involved_agents: BTreeSet<String>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            n_reviews: 1,
            n_steps: 8,
            n_fails: 3,
            n_rounds: 500,
            involved_agents: BTreeSet::new(),
        }
    }
}

impl OrchestratorConfig {
    pub fn with_agents<I, S>(agents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            involved_agents: agents.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidRequest(m.to_string()));
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if self.n_fails == 0 {
            return bad("n_fails must be at least 1");
        }
        if self.n_rounds < 2 {
            return bad("n_rounds must leave room for a terminator turn");
        }
        if self.involved_agents.is_empty() {
            return bad("at least one involved agent is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Planning,
    Controlling,
    Terminated,
    Aborted,
}

impl SessionStatus {
    pub fn is_final(self) -> bool {
        matches!(self, SessionStatus::Terminated | SessionStatus::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    InProgress,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NextAgent {
    /// The agent assigned to the current step.
    Step(String),
    /// Install the named package, then return to the current step's agent.
    Installer(String),
    Terminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    FailureCap,
    RoundCap,
}

/// Shared key-value state of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVars {
    pub plan: Option<Plan>,
    pub recommendations: Vec<String>,
    /// 0-based index into the plan.
    pub current_step: usize,
    pub step_status: StepStatus,
    pub new_plots_produced: bool,
    pub new_code_produced: bool,
    pub code_exec_failed: bool,
    pub next_agent: Option<NextAgent>,
    pub abort_reason: Option<AbortReason>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for ContextVars {
    fn default() -> Self {
        Self {
            plan: None,
            recommendations: Vec::new(),
            current_step: 0,
            step_status: StepStatus::InProgress,
            new_plots_produced: false,
            new_code_produced: false,
            code_exec_failed: false,
            next_agent: None,
            abort_reason: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub context: ContextVars,
    pub rounds_used: usize,
    pub failures: usize,
    pub status: SessionStatus,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            context: ContextVars::default(),
            rounds_used: 0,
            failures: 0,
            status: SessionStatus::Planning,
        }
    }
}

impl SessionState {
    /// Control-phase state positioned on step 0 of `plan`.
    pub fn controlling(plan: Plan) -> Self {
        let first = plan
            .steps
            .first()
            .map(|s| NextAgent::Step(s.sub_task_agent.clone()));
        Self {
            context: ContextVars {
                plan: Some(plan),
                next_agent: first,
                ..ContextVars::default()
            },
            rounds_used: 0,
            failures: 0,
            status: SessionStatus::Controlling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "package", rename_all = "snake_case")]
pub enum FailureKind {
    CodeExecution,
    MissingPackage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "failure", rename_all = "snake_case")]
pub enum StepOutcome {
    Completed,
    Failed(FailureKind),
    InProgress,
}

/// What the agent that just finished a turn reports to control.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub outcome: StepOutcome,
    pub new_plots: bool,
    pub new_code: bool,
}

impl StepReport {
    pub fn completed() -> Self {
        Self::of(StepOutcome::Completed)
    }

    pub fn failed(kind: FailureKind) -> Self {
        Self::of(StepOutcome::Failed(kind))
    }

    pub fn in_progress() -> Self {
        Self::of(StepOutcome::InProgress)
    }

    pub fn of(outcome: StepOutcome) -> Self {
        Self {
            outcome,
            new_plots: false,
            new_code: false,
        }
    }

    pub fn with_plots(mut self, v: bool) -> Self {
        self.new_plots = v;
        self
    }

    pub fn with_code(mut self, v: bool) -> Self {
        self.new_code = v;
        self
    }
}

/// Pure control transition.
///
/// Next-agent priority when several conditions hold: abort, then installer,
/// then retry, then advance. Final states are absorbing.
pub fn record_status(
    state: &SessionState,
    report: &StepReport,
    cfg: &OrchestratorConfig,
) -> SessionState {
    let mut s = state.clone();
    if s.status.is_final() {
        return s;
    }
    let (step_count, agent_of) = match &s.context.plan {
        Some(p) => (
            p.steps.len(),
            p.steps
                .iter()
                .map(|st| st.sub_task_agent.clone())
                .collect::<Vec<_>>(),
        ),
        None => (0, Vec::new()),
    };
    let current_agent = |i: usize| agent_of.get(i).cloned().unwrap_or_default();

    s.status = SessionStatus::Controlling;
    let ctx = &mut s.context;
    ctx.new_plots_produced |= report.new_plots;
    ctx.new_code_produced |= report.new_code;

    match &report.outcome {
        StepOutcome::InProgress => {
            ctx.step_status = StepStatus::InProgress;
            ctx.next_agent = Some(NextAgent::Step(current_agent(ctx.current_step)));
        }
        StepOutcome::Completed => {
            ctx.code_exec_failed = false;
            if ctx.current_step + 1 >= step_count {
                ctx.step_status = StepStatus::Completed;
                ctx.next_agent = Some(NextAgent::Terminator);
                s.status = SessionStatus::Terminated;
            } else {
                ctx.current_step += 1;
                ctx.step_status = StepStatus::InProgress;
                ctx.new_plots_produced = false;
                ctx.new_code_produced = false;
                ctx.next_agent = Some(NextAgent::Step(current_agent(ctx.current_step)));
            }
        }
        StepOutcome::Failed(kind) => {
            s.failures += 1;
            ctx.step_status = StepStatus::Failed;
            ctx.code_exec_failed = true;
            if s.failures >= cfg.n_fails {
                ctx.next_agent = Some(NextAgent::Terminator);
                ctx.abort_reason = Some(AbortReason::FailureCap);
                s.status = SessionStatus::Aborted;
            } else {
                ctx.next_agent = Some(match kind {
                    FailureKind::MissingPackage(pkg) => NextAgent::Installer(pkg.clone()),
                    FailureKind::CodeExecution => {
                        NextAgent::Step(current_agent(ctx.current_step))
                    }
                });
            }
        }
    }
    s
}
