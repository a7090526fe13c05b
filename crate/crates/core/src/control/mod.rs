//! Planning & Control orchestration.

mod plan;
mod session;
mod state;

pub use plan::{parse_plan, validate_plan, Plan, PlanError, PlanStep};
pub use session::{
    run_session, split_status, AgentSet, AgentTurn, LlmStepAgent, PackageInstaller, Session,
    SessionOutcome, StepAgent, StepRecord, StepTurn, CONTROL, INSTALLER, PLANNER, PLAN_REASKS,
    PLAN_REVIEWER, PLAN_SETTER, TERMINATOR,
};
pub use state::{
    record_status, AbortReason, ContextVars, FailureKind, NextAgent, OrchestratorConfig,
    SessionState, SessionStatus, StepOutcome, StepReport, StepStatus,
};
