//! Analysis stage: engineer/researcher session over a script sandbox.

mod codeblocks;
mod sandbox;

pub use codeblocks::{extract_code_blocks, first_python_block, CodeBlock};
pub use sandbox::{
    execute_script, execute_script_streaming, is_plot, missing_package, run_install, ExecResult,
    SandboxPolicy, Stream, PLOT_EXTENSIONS,
};

use std::collections::BTreeMap;


use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{
    run_session, AgentSet, AgentTurn, FailureKind, OrchestratorConfig, PackageInstaller,
    SessionOutcome, StepAgent, StepOutcome, StepReport, StepTurn,
};
use crate::error::{Error, Result};
use crate::events::RunEvent;
use crate::llm::{AgentMessage, Role, Usage};
use crate::project::{ArtifactRole, ProjectDir};
use crate::prompts;
use crate::runtime::Conversation;

pub const ENGINEER: &str = "engineer";
pub const RESEARCHER: &str = "researcher";
/// Nested self-debug exchanges per failed execution.
pub const DEBUG_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub policy: SandboxPolicy,
    pub orchestrator: OrchestratorConfig,
    pub debug_depth: usize,
}

impl AnalysisConfig {
    /// Defaults with the sandbox at `<project>/codebase`.
    pub fn for_project(project: &ProjectDir) -> Self {
        Self {
            policy: SandboxPolicy::new(project.root().join("codebase")),
            orchestrator: OrchestratorConfig::with_agents([ENGINEER, RESEARCHER]),
            debug_depth: DEBUG_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub results: String,
    /// Plot file names now under `Plots/`, in creation order.
    pub plots: Vec<String>,
    /// Plots attributed to the (0-based) plan step whose execution created them.
    pub step_plots: BTreeMap<usize, Vec<String>>,
    pub executions: usize,
    pub installs: Vec<String>,
    pub session: SessionOutcome,
}

/// Writes code, runs it, and repairs it in a nested exchange on failure.
pub struct EngineerAgent {
    instructions: String,
    policy: SandboxPolicy,
    debug_depth: usize,
    pub executions: usize,
    pub plots: Vec<String>,
    pub step_plots: BTreeMap<usize, Vec<String>>,
}

impl EngineerAgent {
    pub fn new(instructions: impl Into<String>, policy: SandboxPolicy, debug_depth: usize) -> Self {
        Self {
            instructions: instructions.into(),
            policy,
            debug_depth,
            executions: 0,
            plots: Vec::new(),
            step_plots: BTreeMap::new(),
        }
    }

    fn execute(&mut self, code: &str, name: &str, convo: &mut Conversation<'_>) -> Result<ExecResult> {
        self.executions += 1;
        let stage = convo.stage().to_string();
        let events = convo.runtime().events.clone();
        let result = execute_script_streaming(code, name, &self.policy, &mut |stream, chunk| {
            events.emit(RunEvent::ExecOutput {
                stage: stage.clone(),
                stream: stream.as_str().into(),
                chunk: chunk.into(),
            })
        });
        let result = match result {
            Err(Error::Timeout(limit)) => ExecResult {
                exit_status: -1,
                stdout: String::new(),
                stderr: format!("execution timed out after {}s and was killed", limit.as_secs()),
                new_files: Vec::new(),
                wall_time: limit,
                warnings: Vec::new(),
                confined: false,
            },
            other => other?,
        };
        for w in &result.warnings {
            convo.warn(w.clone());
        }
        Ok(result)
    }

    fn nested(&self, convo: &mut Conversation<'_>, role: Role, text: String) -> Result<()> {
        convo.record_nested(AgentMessage::text(ENGINEER, role, text))
    }

    /// Moves plots out of the workdir into `Plots/`.
    fn collect_plots(&mut self, step: usize, result: &ExecResult, convo: &mut Conversation<'_>) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for rel in result.plots() {
            let src = self.policy.workdir.join(rel);
            let Some(project) = convo.project() else {
                names.push(rel.to_string_lossy().into_owned());
                continue;
            };
            let base = rel
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut name = base.clone();
            if project.exists(&ArtifactRole::Plot(name.clone())) {
                name = format!("step{}_{}", step + 1, base);
            }
            let bytes = std::fs::read(&src).map_err(|e| Error::io(&src, e))?;
            project.write_artifact(&ArtifactRole::Plot(name.clone()), &bytes)?;
            let _ = std::fs::remove_file(&src);
            names.push(name);
        }
        self.plots.extend(names.iter().cloned());
        self.step_plots.entry(step).or_default().extend(names.iter().cloned());
        Ok(names)
    }
}

fn success_summary(stdout: &str, plots: &[String]) -> String {
    let plots = if plots.is_empty() {
        "none".to_string()
    } else {
        plots.join(", ")
    };
    format!("Console output:\n```\n{}\n```\nPlots: {plots}", stdout.trim_end())
}

fn tail(text: &str, max_lines: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(max_lines)..].join("\n")
}

impl StepAgent for EngineerAgent {
    fn run(&mut self, turn: &StepTurn<'_>, convo: &mut Conversation<'_>) -> Result<AgentTurn> {
        let rt = convo.runtime();
        let mut usage = Usage::default();
        let req = rt
            .request(ENGINEER)
            .system(prompts::step_agent_system(ENGINEER, &self.instructions))
            .user(prompts::step_agent_user(turn));
        let reply = convo.complete(&req)?;
        usage += reply.usage;
        self.nested(convo, Role::Assistant, reply.text.clone())?;

        let Some(mut code) = first_python_block(&reply.text) else {
            return Ok(AgentTurn {
                content: "The engineer reply contained no Python code block.".into(),
                usage,
                report: StepReport::failed(FailureKind::CodeExecution),
            });
        };
        let base = format!("step{}_attempt{}", turn.index + 1, turn.attempt + 1);
        let mut result = self.execute(&code, &format!("{base}.py"), convo)?;
        let mut exchanges = 0;
        while !result.success() && exchanges < self.debug_depth {
            if missing_package(&result.stderr).is_some() {
                break;
            }
            exchanges += 1;
            let ask = prompts::debug_request(&code, &tail(&result.stdout, 40), &tail(&result.stderr, 60));
            self.nested(convo, Role::User, ask.clone())?;
            let fix = convo.complete(&rt.request(ENGINEER).system(prompts::DEBUGGER).user(ask))?;
            usage += fix.usage;
            self.nested(convo, Role::Assistant, fix.text.clone())?;
            let Some(fixed) = first_python_block(&fix.text) else {
                continue;
            };
            code = fixed;
            result = self.execute(&code, &format!("{base}_fix{exchanges}.py"), convo)?;
        }

        if result.success() {
            let plots = self.collect_plots(turn.index, &result, convo)?;
            let mut content = success_summary(&result.stdout, &plots);
            if exchanges > 0 {
                self.nested(convo, Role::Assistant, format!("resolved after {exchanges} debug exchange(s)"))?;
            }
            content.push('\n');
            return Ok(AgentTurn {
                content: content.trim_end().to_string(),
                usage,
                report: StepReport::completed()
                    .with_code(true)
                    .with_plots(!plots.is_empty()),
            });
        }

        let kind = match missing_package(&result.stderr) {
            Some(pkg) => FailureKind::MissingPackage(pkg),
            None => FailureKind::CodeExecution,
        };
        Ok(AgentTurn {
            content: format!(
                "Execution failed (exit {}) after {exchanges} debug exchange(s).\nstderr (tail):\n{}",
                result.exit_status,
                tail(&result.stderr, 20)
            ),
            usage,
            report: StepReport::failed(kind).with_code(true),
        })
    }
}

/// Writes the report; sees completed engineer output (console text and plot
/// names) and earlier researcher text, never file contents.
pub struct ResearcherAgent {
    instructions: String,
}

impl ResearcherAgent {
    pub fn new(instructions: impl Into<String>) -> Self {
        Self {
            instructions: instructions.into(),
        }
    }
}

impl StepAgent for ResearcherAgent {
    fn run(&mut self, turn: &StepTurn<'_>, convo: &mut Conversation<'_>) -> Result<AgentTurn> {
        let visible: Vec<_> = turn
            .history
            .iter()
            .filter(|r| r.outcome == StepOutcome::Completed)
            .cloned()
            .collect();
        let view = StepTurn {
            history: &visible,
            ..*turn
        };
        let req = convo
            .runtime()
            .request(RESEARCHER)
            .system(prompts::step_agent_system(RESEARCHER, &self.instructions))
            .user(prompts::step_agent_user(&view));
        let resp = convo.complete(&req)?;
        let (content, outcome) = crate::control::split_status(&resp.text);
        Ok(AgentTurn {
            content,
            usage: resp.usage,
            report: StepReport::of(outcome),
        })
    }
}

/// Runs the install command template once per request.
pub struct SandboxInstaller {
    policy: SandboxPolicy,
    pub installed: Vec<String>,
}

impl SandboxInstaller {
    pub fn new(policy: SandboxPolicy) -> Self {
        Self {
            policy,
            installed: Vec::new(),
        }
    }
}

impl PackageInstaller for SandboxInstaller {
    fn install(&mut self, package: &str, _convo: &mut Conversation<'_>) -> Result<String> {
        self.installed.push(package.to_string());
        let r = run_install(package, &self.policy)?;
        Ok(format!(
            "install {package}: exit {}\n{}",
            r.exit_status,
            tail(&format!("{}{}", r.stdout, r.stderr), 10)
        ))
    }
}

/// Engineer/researcher session producing the results report and plots.
pub fn run_analysis(
    input: &str,
    idea: &str,
    methods: &str,
    convo: &mut Conversation<'_>,
    cfg: &AnalysisConfig,
) -> Result<AnalysisOutcome> {
    for (name, text) in [("input", input), ("idea", idea), ("methods", methods)] {
        if text.trim().is_empty() {
            return Err(Error::Precondition(format!("{name} text is empty")));
        }
    }
    let agents_str = cfg
        .orchestrator
        .involved_agents
        .iter()
        .cloned()
        .collect::<Vec<_>>()
        .join(", ");
    let instructions = prompts::analysis_planning(idea, methods, &agents_str);
    let mut engineer = EngineerAgent::new(
        prompts::analysis_engineer(idea, methods),
        cfg.policy.clone(),
        cfg.debug_depth,
    );
    let mut researcher = ResearcherAgent::new(prompts::analysis_researcher(idea, methods));
    let mut installer = SandboxInstaller::new(cfg.policy.clone());
    let outcome = {
        let mut agents = AgentSet::new()
            .with(ENGINEER, &mut engineer)
            .with(RESEARCHER, &mut researcher)
            .with_installer(&mut installer);
        run_session(convo, cfg.orchestrator.clone(), input, &instructions, &mut agents)?
    };
    convo.snapshot(
        "analysis_plots",
        &json!({"step_plots": engineer.step_plots, "plots": engineer.plots}),
    )?;
    if !outcome.succeeded() {
        convo.snapshot(
            "analysis_aborted",
            &json!({"abort_reason": outcome.abort_reason, "state": outcome.state}),
        )?;
        return Err(Error::Aborted(format!(
            "analysis session ended with {:?} after {} executions",
            outcome.abort_reason, engineer.executions
        )));
    }
    if outcome.plan.steps.last().map(|s| s.sub_task_agent.as_str()) != Some(RESEARCHER) {
        convo.warn("the final analysis step was not assigned to the researcher");
    }
    let results = outcome.final_output().unwrap_or_default().trim().to_string();
    if results.is_empty() {
        return Err(Error::EmptySection("results".into()));
    }
    Ok(AnalysisOutcome {
        results,
        plots: engineer.plots,
        step_plots: engineer.step_plots,
        executions: engineer.executions,
        installs: installer.installed,
        session: outcome,
    })
}

