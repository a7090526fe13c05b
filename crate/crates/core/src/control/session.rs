use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::plan::{parse_plan, validate_plan, Plan, PlanError, PlanStep};
use super::state::{
    record_status, AbortReason, NextAgent, OrchestratorConfig, SessionState, SessionStatus,
    StepOutcome, StepReport,
};
use crate::error::{Error, Result};
use crate::llm::{AgentMessage, Role, Usage};
use crate::prompts;
use crate::runtime::Conversation;

/// Re-asks granted to the planner after an unparseable or invalid plan.
pub const PLAN_REASKS: usize = 2;

pub const PLAN_SETTER: &str = "plan_setter";
pub const PLANNER: &str = "planner";
pub const PLAN_REVIEWER: &str = "plan_reviewer";
pub const CONTROL: &str = "control";
pub const INSTALLER: &str = "installer";
pub const TERMINATOR: &str = "terminator";

/// A finished agent turn as seen from the control loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub agent: String,
    pub output: String,
    pub outcome: StepOutcome,
}

/// What an agent gets to see when control hands it a step.
#[derive(Debug)]
pub struct StepTurn<'a> {
    pub task: &'a str,
    pub plan: &'a Plan,
    pub index: usize,
    pub step: &'a PlanStep,
    pub history: &'a [StepRecord],
    /// How many times this step has already been dispatched.
    pub attempt: usize,
}

impl StepTurn<'_> {
    pub fn is_last(&self) -> bool {
        self.index + 1 == self.plan.len()
    }

    /// Outputs of earlier turns, oldest first.
    pub fn render_history(&self) -> String {
        let mut out = String::new();
        for r in self.history {
            out.push_str(&format!(
                "--- step {} ({}) ---\n{}\n",
                r.step_index + 1,
                r.agent,
                r.output.trim_end()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTurn {
    /// Text entering the main transcript for this turn.
    pub content: String,
    pub usage: Usage,
    pub report: StepReport,
}

pub trait StepAgent {
    fn run(&mut self, turn: &StepTurn<'_>, convo: &mut Conversation<'_>) -> Result<AgentTurn>;
}

pub trait PackageInstaller {
    /// Installs `package`, returning a log line for the transcript.
    fn install(&mut self, package: &str, convo: &mut Conversation<'_>) -> Result<String>;
}

impl<T: StepAgent + ?Sized> StepAgent for &mut T {
    fn run(&mut self, turn: &StepTurn<'_>, convo: &mut Conversation<'_>) -> Result<AgentTurn> {
        (**self).run(turn, convo)
    }
}

impl<T: PackageInstaller + ?Sized> PackageInstaller for &mut T {
    fn install(&mut self, package: &str, convo: &mut Conversation<'_>) -> Result<String> {
        (**self).install(package, convo)
    }
}

/// Named step agents plus the optional installer.
#[derive(Default)]
pub struct AgentSet<'x> {
    agents: BTreeMap<String, Box<dyn StepAgent + 'x>>,
    installer: Option<Box<dyn PackageInstaller + 'x>>,
}

impl<'x> AgentSet<'x> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, agent: impl StepAgent + 'x) -> Self {
        self.agents.insert(name.into(), Box::new(agent));
        self
    }

    pub fn with_installer(mut self, installer: impl PackageInstaller + 'x) -> Self {
        self.installer = Some(Box::new(installer));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub status: SessionStatus,
    pub abort_reason: Option<AbortReason>,
    pub plan: Plan,
    pub state: SessionState,
    /// Every agent turn dispatched by control, in order.
    pub history: Vec<StepRecord>,
    /// Session messages, including planning, control and terminator turns.
    pub messages: Vec<AgentMessage>,
}

impl SessionOutcome {
    pub fn succeeded(&self) -> bool {
        self.status == SessionStatus::Terminated
    }

    /// Output of the last completed turn of the final step.
    pub fn final_output(&self) -> Option<&str> {
        let last = self.plan.len().checked_sub(1)?;
        self.history
            .iter()
            .rev()
            .find(|r| r.step_index == last && r.outcome == StepOutcome::Completed)
            .map(|r| r.output.as_str())
    }

    pub fn count_agent(&self, agent: &str) -> usize {
        self.messages.iter().filter(|m| m.agent == agent).count()
    }
}

/// One Planning & Control session.
pub struct Session<'c, 'a> {
    convo: &'c mut Conversation<'a>,
    cfg: OrchestratorConfig,
    state: SessionState,
    first_message: usize,
}

impl<'c, 'a> Session<'c, 'a> {
    pub fn new(convo: &'c mut Conversation<'a>, cfg: OrchestratorConfig) -> Result<Self> {
        cfg.validate()?;
        let first_message = convo.messages().len();
        Ok(Self {
            convo,
            cfg,
            state: SessionState::default(),
            first_message,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.cfg
    }

    fn messages(&self) -> Vec<AgentMessage> {
        self.convo.messages()[self.first_message..].to_vec()
    }

    /// Room left for one more ordinary message while keeping a terminator slot.
    fn has_room(&self) -> bool {
        self.state.rounds_used + 2 <= self.cfg.n_rounds
    }

    fn push(&mut self, msg: AgentMessage) -> Result<()> {
        self.convo.record(msg)?;
        self.state.rounds_used += 1;
        Ok(())
    }

    fn push_text(&mut self, agent: &str, text: String, usage: Option<Usage>) -> Result<()> {
        let mut msg = AgentMessage::text(agent, Role::Assistant, text);
        msg.usage = usage;
        self.push(msg)
    }

    fn ask_counted(&mut self, agent: &str, system: String, user: String) -> Result<String> {
        if !self.has_room() {
            return Err(Error::RoundCapExceeded(self.cfg.n_rounds));
        }
        let req = self.convo.runtime().request(agent).system(system).user(user);
        let resp = self.convo.complete(&req)?;
        self.push_text(agent, resp.text.clone(), Some(resp.usage))?;
        Ok(resp.text)
    }

    /// Planner/reviewer exchange producing a validated plan.
    ///
    /// `instructions` are the stage-specific planning instructions.
    pub fn run_planning(&mut self, task: &str, instructions: &str) -> Result<Plan> {
        self.state.status = SessionStatus::Planning;
        if !self.has_room() {
            return Err(Error::RoundCapExceeded(self.cfg.n_rounds));
        }
        let agents: Vec<String> = self.cfg.involved_agents.iter().cloned().collect();
        self.push_text(
            PLAN_SETTER,
            format!("Involved agents for this session: {}", agents.join(", ")),
            None,
        )?;
        self.state
            .context
            .extra
            .insert("involved_agents".into(), json!(agents));

        let mut plan = self.propose(task, instructions, None)?;
        for _ in 0..self.cfg.n_reviews {
            let system = prompts::plan_reviewer_system(self.cfg.n_steps, &self.cfg.involved_agents);
            let user = prompts::plan_reviewer_user(task, instructions, &plan);
            let recommendation = self.ask_counted(PLAN_REVIEWER, system, user)?;
            self.state
                .context
                .recommendations
                .push(recommendation.clone());
            plan = self.propose(task, instructions, Some((&plan, &recommendation)))?;
        }
        self.state.context.plan = Some(plan.clone());
        self.convo.snapshot(
            &format!("{}_plan", self.convo.stage()),
            &json!({"plan": plan, "state": self.state}),
        )?;
        Ok(plan)
    }

    fn propose(
        &mut self,
        task: &str,
        instructions: &str,
        revision: Option<(&Plan, &str)>,
    ) -> Result<Plan> {
        let system = prompts::planner_system(self.cfg.n_steps, &self.cfg.involved_agents);
        let base = prompts::planner_user(task, instructions, revision);
        let mut feedback: Option<PlanError> = None;
        let attempts = 1 + PLAN_REASKS;
        for _ in 0..attempts {
            let user = match &feedback {
                None => base.clone(),
                Some(err) => prompts::planner_reask(&base, err),
            };
            let reply = self.ask_counted(PLANNER, system.clone(), user)?;
            let checked = parse_plan(&reply).and_then(|p| {
                validate_plan(&p, self.cfg.n_steps, &self.cfg.involved_agents).map(|_| p)
            });
            match checked {
                Ok(p) => return Ok(p),
                Err(e) => {
                    self.convo.warn(format!("planner output rejected: {e}"));
                    feedback = Some(e);
                }
            }
        }
        Err(Error::MalformedPlan {
            attempts,
            reason: feedback.unwrap_or(PlanError::EmptyPlan),
        })
    }

    /// Runs the control loop over `plan` until termination or abort.
    pub fn run_control(
        &mut self,
        plan: Plan,
        task: &str,
        agents: &mut AgentSet<'_>,
    ) -> Result<SessionOutcome> {
        validate_plan(&plan, self.cfg.n_steps, &self.cfg.involved_agents)?;
        for step in &plan.steps {
            if !agents.agents.contains_key(&step.sub_task_agent) {
                return Err(Error::InvalidRequest(format!(
                    "no agent implementation for '{}'",
                    step.sub_task_agent
                )));
            }
        }
        let rounds = self.state.rounds_used;
        let recommendations = std::mem::take(&mut self.state.context.recommendations);
        let extra = std::mem::take(&mut self.state.context.extra);
        self.state = SessionState::controlling(plan.clone());
        self.state.rounds_used = rounds;
        self.state.context.recommendations = recommendations;
        self.state.context.extra = extra;

        let mut history: Vec<StepRecord> = Vec::new();
        let mut attempts: BTreeMap<usize, usize> = BTreeMap::new();

        if self.has_room() {
            let note = self.control_note();
            self.push_text(CONTROL, note, None)?;
        } else {
            self.abort_on_rounds();
        }

        while !self.state.status.is_final() {
            self.convo.runtime().cancel.check()?;
            if !self.has_room() {
                self.abort_on_rounds();
                break;
            }
            let next = self
                .state
                .context
                .next_agent
                .clone()
                .unwrap_or(NextAgent::Terminator);
            match next {
                NextAgent::Terminator => break,
                NextAgent::Installer(package) => {
                    let log = match agents.installer.as_mut() {
                        Some(inst) => inst.install(&package, self.convo)?,
                        None => format!("no installer configured; cannot install {package}"),
                    };
                    self.push_text(INSTALLER, log, None)?;
                    let agent = plan.steps[self.state.context.current_step]
                        .sub_task_agent
                        .clone();
                    self.state.context.next_agent = Some(NextAgent::Step(agent));
                }
                NextAgent::Step(name) => {
                    let index = self.state.context.current_step;
                    let attempt = attempts.entry(index).or_insert(0);
                    let turn = StepTurn {
                        task,
                        plan: &plan,
                        index,
                        step: &plan.steps[index],
                        history: &history,
                        attempt: *attempt,
                    };
                    *attempt += 1;
                    let agent = agents.agents.get_mut(&name).ok_or_else(|| {
                        Error::InvalidRequest(format!("no agent implementation for '{name}'"))
                    })?;
                    let result = agent.run(&turn, self.convo)?;
                    self.push_text(&name, result.content.clone(), Some(result.usage))?;
                    history.push(StepRecord {
                        step_index: index,
                        agent: name.clone(),
                        output: result.content,
                        outcome: result.report.outcome.clone(),
                    });
                    if !self.has_room() {
                        self.abort_on_rounds();
                        break;
                    }
                    self.state = record_status(&self.state, &result.report, &self.cfg);
                    let note = self.control_note();
                    self.push_text(CONTROL, note, None)?;
                    self.convo.snapshot(
                        &format!("{}_control", self.convo.stage()),
                        &json!({"state": self.state, "history": history}),
                    )?;
                }
            }
        }

        let farewell = match self.state.status {
            SessionStatus::Terminated => "Session complete: every step of the plan succeeded.".to_string(),
            _ => format!(
                "Session aborted ({}).",
                match self.state.context.abort_reason {
                    Some(AbortReason::FailureCap) => "failure cap reached",
                    Some(AbortReason::RoundCap) => "round cap reached",
                    None => "no reason recorded",
                }
            ),
        };
        self.push_text(TERMINATOR, farewell, None)?;

        Ok(SessionOutcome {
            status: self.state.status,
            abort_reason: self.state.context.abort_reason,
            plan,
            state: self.state.clone(),
            history,
            messages: self.messages(),
        })
    }

    fn abort_on_rounds(&mut self) {
        self.state.status = SessionStatus::Aborted;
        self.state.context.abort_reason = Some(AbortReason::RoundCap);
        self.state.context.next_agent = Some(NextAgent::Terminator);
    }

    fn control_note(&self) -> String {
        let c = &self.state.context;
        json!({
            "function": "record_status",
            "current_step": c.current_step + 1,
            "step_status": c.step_status,
            "new_plots_produced": c.new_plots_produced,
            "new_code_produced": c.new_code_produced,
            "code_exec_failed": c.code_exec_failed,
            "failures": self.state.failures,
            "next_agent": c.next_agent,
        })
        .to_string()
    }
}

/// Planning followed by control in one session.
pub fn run_session(
    convo: &mut Conversation<'_>,
    cfg: OrchestratorConfig,
    task: &str,
    instructions: &str,
    agents: &mut AgentSet<'_>,
) -> Result<SessionOutcome> {
    let mut session = Session::new(convo, cfg)?;
    let plan = session.run_planning(task, instructions)?;
    session.run_control(plan, task, agents)
}

/// A step agent backed by a single LLM completion per turn.
///
/// The reply may end with a `STATUS: completed|in_progress|failed` line; a
/// reply without one counts as completed.
pub struct LlmStepAgent {
    name: String,
    instructions: String,
}

impl LlmStepAgent {
    pub fn new(name: impl Into<String>, instructions: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            instructions: instructions.into(),
        }
    }
}

impl StepAgent for LlmStepAgent {
    fn run(&mut self, turn: &StepTurn<'_>, convo: &mut Conversation<'_>) -> Result<AgentTurn> {
        let req = convo
            .runtime()
            .request(&self.name)
            .system(prompts::step_agent_system(&self.name, &self.instructions))
            .user(prompts::step_agent_user(turn));
        let resp = convo.complete(&req)?;
        let (content, outcome) = split_status(&resp.text);
        Ok(AgentTurn {
            content,
            usage: resp.usage,
            report: StepReport::of(outcome),
        })
    }
}

/// Strips a trailing `STATUS:` line and maps it to a step outcome.
pub fn split_status(text: &str) -> (String, StepOutcome) {
    let trimmed = text.trim_end();
    if let Some((body, last)) = trimmed.rsplit_once('\n').or(Some(("", trimmed))) {
        let line = last.trim();
        if let Some(value) = line
            .strip_prefix("STATUS:")
            .or_else(|| line.strip_prefix("Status:"))
        {
            let outcome = match value.trim().to_ascii_lowercase().as_str() {
                "in_progress" | "in progress" => Some(StepOutcome::InProgress),
                "failed" => Some(StepOutcome::Failed(super::state::FailureKind::CodeExecution)),
                "completed" | "complete" | "done" => Some(StepOutcome::Completed),
                _ => None,
            };
            if let Some(o) = outcome {
                return (body.trim_end().to_string(), o);
            }
        }
    }
    (trimmed.to_string(), StepOutcome::Completed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_tags() {
        assert_eq!(
            split_status("Need more info\nSTATUS: in_progress"),
            ("Need more info".into(), StepOutcome::InProgress)
        );
        assert_eq!(
            split_status("all good"),
            ("all good".into(), StepOutcome::Completed)
        );
        assert_eq!(split_status("STATUS: completed").1, StepOutcome::Completed);
        assert_eq!(
            split_status("text\nSTATUS: whatever").0,
            "text\nSTATUS: whatever"
        );
    }
}
