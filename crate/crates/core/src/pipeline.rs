//! One entry point per stage plus the end-to-end run, with dependency
//! checks and a run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{run_analysis, AnalysisConfig, SandboxPolicy};
use crate::control::OrchestratorConfig;
use crate::error::{Error, Result};
use crate::events::RunEvent;
use crate::literature::{check_novelty, OwlStub, SearchPort, SemanticScholar, DEFAULT_MAX_ITERS};
use crate::llm::{AgentModels, ModelRegistry, Usage};
use crate::paper::{run_paper, Journal, PaperConfig};
use crate::project::{ArtifactRole, ProjectDir, MANIFEST_FILE};
use crate::review::{latest_pdf, run_review, ReviewConfig};
use crate::runtime::{Conversation, Runtime};
use crate::{idea, methods};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Idea,
    Literature,
    Methods,
    Analysis,
    Paper,
    Review,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Idea,
        Stage::Literature,
        Stage::Methods,
        Stage::Analysis,
        Stage::Paper,
        Stage::Review,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Idea => "idea",
            Stage::Literature => "literature",
            Stage::Methods => "methods",
            Stage::Analysis => "analysis",
            Stage::Paper => "paper",
            Stage::Review => "review",
        }
    }

    /// Artifacts that must exist before the stage may run. The review stage
    /// additionally needs a paper PDF, checked separately.
    pub fn inputs(self) -> &'static [ArtifactRole] {
        use ArtifactRole::*;
        match self {
            Stage::Idea => &[Input],
            Stage::Literature | Stage::Methods => &[Input, Idea],
            Stage::Analysis => &[Input, Idea, Methods],
            Stage::Paper => &[Input, Idea, Methods, Results],
            Stage::Review => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idea" => Ok(Stage::Idea),
            "literature" | "check-idea" | "check_idea" => Ok(Stage::Literature),
            "methods" => Ok(Stage::Methods),
            "analysis" | "results" => Ok(Stage::Analysis),
            "paper" => Ok(Stage::Paper),
            "review" | "referee" => Ok(Stage::Review),
            other => Err(Error::InvalidRequest(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Fast,
    Planned,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(Mode::Fast),
            "planned" => Ok(Mode::Planned),
            other => Err(Error::InvalidRequest(format!("unknown mode '{other}' (fast|planned)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fast => "fast",
            Mode::Planned => "planned",
        })
    }
}

/// Everything a run can be configured with.
#[derive(Clone)]
pub struct RunOptions {
    /// Mode for the idea and methods stages unless overridden per stage.
    pub mode: Mode,
    pub stage_modes: BTreeMap<Stage, Mode>,
    pub max_rounds: Option<usize>,
    pub max_fails: Option<usize>,
    pub literature_max_iters: usize,
    pub search: Arc<dyn SearchPort>,
    pub sandbox: Option<SandboxPolicy>,
    pub paper: PaperConfig,
    pub review: ReviewConfig,
    /// PDF to review instead of the latest paper version.
    pub review_pdf: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        let search: Arc<dyn SearchPort> = match SemanticScholar::new() {
            Ok(s) => Arc::new(s),
            Err(_) => Arc::new(OwlStub),
        };
        Self {
            mode: Mode::Fast,
            stage_modes: BTreeMap::new(),
            max_rounds: None,
            max_fails: None,
            literature_max_iters: DEFAULT_MAX_ITERS,
            search,
            sandbox: None,
            paper: PaperConfig::default(),
            review: ReviewConfig::default(),
            review_pdf: None,
        }
    }
}

impl RunOptions {
    pub fn mode_for(&self, stage: Stage) -> Mode {
        self.stage_modes.get(&stage).copied().unwrap_or(self.mode)
    }

    fn tune(&self, mut cfg: OrchestratorConfig) -> OrchestratorConfig {
        if let Some(r) = self.max_rounds {
            cfg.n_rounds = r;
        }
        if let Some(f) = self.max_fails {
            cfg.n_fails = f;
        }
        cfg
    }
}

/// The user-facing knobs shared by the command line and the service.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub mode: Option<Mode>,
    /// Model name (or `provider:name`) used by every agent.
    pub model: Option<String>,
    pub journal: Option<Journal>,
    pub citations: Option<bool>,
    pub max_rounds: Option<usize>,
    pub max_fails: Option<usize>,
}

impl RunSettings {
    pub fn apply(&self, mut opts: RunOptions) -> RunOptions {
        if let Some(m) = self.mode {
            opts.mode = m;
        }
        if let Some(j) = self.journal {
            opts.paper.journal = j;
        }
        if let Some(c) = self.citations {
            opts.paper.citations = c;
        }
        opts.max_rounds = self.max_rounds.or(opts.max_rounds);
        opts.max_fails = self.max_fails.or(opts.max_fails);
        opts
    }

    /// Uniform agent models when a model was requested. The model must be
    /// known to `registry`.
    pub fn models(&self, registry: &ModelRegistry) -> Result<Option<AgentModels>> {
        let Some(spec) = &self.model else {
            return Ok(None);
        };
        let id = registry.clone().resolve(spec)?;
        match registry.get(&id.name) {
            Some(info) if info.id == id => Ok(Some(AgentModels::uniform(id))),
            _ => Err(Error::UnknownModel(spec.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Running,
    Done,
    Failed,
    Skipped,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub mode: Option<Mode>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub duration_ms: Option<u64>,
    pub usage: Usage,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub outputs: Vec<String>,
}

impl StageRecord {
    fn skipped(reason: impl Into<String>) -> Self {
        Self {
            status: StageStatus::Skipped,
            mode: None,
            started_at: None,
            finished_at: None,
            duration_ms: None,
            usage: Usage::default(),
            warnings: Vec::new(),
            error: Some(reason.into()),
            outputs: Vec::new(),
        }
    }
}

/// `manifest.json`: per-stage status of the latest run of each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<Stage, StageRecord>,
    pub literature_verdict: Option<String>,
    pub updated_at: Option<DateTime<Utc>>,
}

impl Manifest {
    pub fn load(project: &ProjectDir) -> Result<Self> {
        let path = project.resolve(MANIFEST_FILE)?;
        match std::fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&mut self, project: &ProjectDir) -> Result<()> {
        self.updated_at = Some(Utc::now());
        project.write_aux(MANIFEST_FILE, &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn status(&self, stage: Stage) -> Option<StageStatus> {
        self.stages.get(&stage).map(|r| r.status)
    }

    fn update(project: &ProjectDir, f: impl FnOnce(&mut Manifest)) -> Result<Manifest> {
        let mut m = Self::load(project)?;
        f(&mut m);
        m.save(project)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub usage: Usage,
    /// Stage-specific details (verdicts, counts, checkpoints).
    pub detail: serde_json::Value,
}

static ACTIVE: Mutex<BTreeSet<PathBuf>> = Mutex::new(BTreeSet::new());

/// Marks a project as running for the lifetime of the guard.
pub struct RunGuard(PathBuf);

impl RunGuard {
    pub fn acquire(project: &ProjectDir) -> Result<Self> {
        let root = project.root().to_path_buf();
        let mut active = ACTIVE.lock().unwrap_or_else(|e| e.into_inner());
        if !active.insert(root.clone()) {
            return Err(Error::RunActive(root));
        }
        Ok(Self(root))
    }
}

impl Drop for RunGuard {
    fn drop(&mut self) {
        ACTIVE.lock().unwrap_or_else(|e| e.into_inner()).remove(&self.0);
    }
}

pub fn is_running(project: &ProjectDir) -> bool {
    ACTIVE
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .contains(project.root())
}

/// Inputs of `stage` that are absent from the project.
pub fn missing_inputs(project: &ProjectDir, stage: Stage, opts: &RunOptions) -> Vec<ArtifactRole> {
    let mut missing: Vec<ArtifactRole> = stage
        .inputs()
        .iter()
        .filter(|r| !project.exists(r))
        .cloned()
        .collect();
    if stage == Stage::Review && opts.review_pdf.is_none() && latest_pdf(project).is_none() {
        missing.push(ArtifactRole::PaperPdf(crate::project::PaperVersion::ALL[3]));
    }
    missing
}

/// Writes a user-supplied artifact; downstream stages cannot tell it apart
/// from a generated one.
pub fn set_artifact(project: &ProjectDir, role: &ArtifactRole, text: &str) -> Result<PathBuf> {
    project.write_text(role, text)
}

fn execute(
    project: &ProjectDir,
    stage: Stage,
    opts: &RunOptions,
    convo: &mut Conversation<'_>,
) -> Result<(Vec<ArtifactRole>, serde_json::Value)> {
    let text = |r: ArtifactRole| project.read_text(&r);
    match stage {
        Stage::Idea => {
            let input = text(ArtifactRole::Input)?;
            let (idea, detail) = match opts.mode_for(stage) {
                Mode::Fast => (idea::generate_idea_fast(&input, convo)?, json!({"mode": "fast"})),
                Mode::Planned => {
                    let (idea, outcome) =
                        idea::generate_idea_planned(&input, convo, opts.tune(idea::planned_config()))?;
                    (idea, json!({"mode": "planned", "steps": outcome.plan.steps.len()}))
                }
            };
            project.write_text(&ArtifactRole::Idea, &idea)?;
            Ok((vec![ArtifactRole::Idea], detail))
        }
        Stage::Literature => {
            let out = check_novelty(
                &text(ArtifactRole::Input)?,
                &text(ArtifactRole::Idea)?,
                opts.search.as_ref(),
                convo,
                opts.literature_max_iters,
            )?;
            project.write_text(&ArtifactRole::Literature, &out.report)?;
            Ok((
                vec![ArtifactRole::Literature],
                json!({
                    "verdict": out.verdict,
                    "forced": out.forced,
                    "iterations": out.iterations,
                    "search_failures": out.search_failures,
                }),
            ))
        }
        Stage::Methods => {
            let (input, idea) = (text(ArtifactRole::Input)?, text(ArtifactRole::Idea)?);
            let methods = match opts.mode_for(stage) {
                Mode::Fast => methods::generate_methods_fast(&input, &idea, convo)?,
                Mode::Planned => {
                    methods::generate_methods_planned(&input, &idea, convo, opts.tune(methods::planned_config()))?.0
                }
            };
            project.write_text(&ArtifactRole::Methods, &methods)?;
            Ok((vec![ArtifactRole::Methods], json!({"mode": opts.mode_for(stage)})))
        }
        Stage::Analysis => {
            let mut cfg = AnalysisConfig::for_project(project);
            if let Some(policy) = &opts.sandbox {
                cfg.policy = policy.clone();
            }
            cfg.orchestrator = opts.tune(cfg.orchestrator);
            let out = run_analysis(
                &text(ArtifactRole::Input)?,
                &text(ArtifactRole::Idea)?,
                &text(ArtifactRole::Methods)?,
                convo,
                &cfg,
            )?;
            project.write_text(&ArtifactRole::Results, &out.results)?;
            let mut outputs = vec![ArtifactRole::Results];
            outputs.extend(out.plots.iter().cloned().map(ArtifactRole::Plot));
            Ok((
                outputs,
                json!({"executions": out.executions, "plots": out.plots, "installs": out.installs}),
            ))
        }
        Stage::Paper => {
            let out = run_paper(project, &opts.paper, convo)?;
            let mut outputs: Vec<ArtifactRole> = crate::project::PaperVersion::ALL
                .iter()
                .flat_map(|v| [ArtifactRole::PaperTex(*v), ArtifactRole::PaperPdf(*v)])
                .collect();
            outputs.push(ArtifactRole::PaperBib);
            outputs.retain(|r| project.exists(r));
            Ok((
                outputs,
                json!({
                    "checkpoints": out.checkpoints,
                    "batches": out.insertion.batch_sizes,
                    "keywords": out.draft.keywords,
                    "bib_entries": out.draft.bib.len(),
                }),
            ))
        }
        Stage::Review => {
            let report = run_review(project, opts.review_pdf.clone(), &opts.review, convo)?;
            Ok((
                vec![ArtifactRole::Referee],
                json!({"score": report.score, "pages": report.page_count}),
            ))
        }
    }
}

fn run_unlocked(project: &ProjectDir, rt: &Runtime, stage: Stage, opts: &RunOptions) -> Result<StageOutcome> {
    let missing = missing_inputs(project, stage, opts);
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(missing).in_stage(stage.as_str()));
    }
    rt.cancel.check().map_err(|e| e.in_stage(stage.as_str()))?;
    let started_at = Utc::now();
    let clock = Instant::now();
    let mode = matches!(stage, Stage::Idea | Stage::Methods).then(|| opts.mode_for(stage));
    Manifest::update(project, |m| {
        m.stages.insert(
            stage,
            StageRecord {
                status: StageStatus::Running,
                mode,
                started_at: Some(started_at),
                ..StageRecord::skipped("")
            },
        );
        if let Some(r) = m.stages.get_mut(&stage) {
            r.error = None;
        }
    })?;
    rt.events.emit(RunEvent::StageStarted {
        stage: stage.to_string(),
    });
    tracing::info!(%stage, "stage started");

    let mut convo = Conversation::new(rt, Some(project), stage.as_str());
    let result = execute(project, stage, opts, &mut convo);
    let warnings = convo.warnings().to_vec();
    let usage = convo.usage();
    let finished = Utc::now();
    let duration_ms = clock.elapsed().as_millis() as u64;

    let (status, error, outputs, detail) = match &result {
        Ok((outputs, detail)) => (
            StageStatus::Done,
            None,
            outputs.iter().map(|r| r.file_name()).collect::<Vec<_>>(),
            detail.clone(),
        ),
        Err(e) => {
            let status = if matches!(e.root(), Error::Interrupted) {
                StageStatus::Interrupted
            } else {
                StageStatus::Failed
            };
            (status, Some(e.to_string()), Vec::new(), serde_json::Value::Null)
        }
    };
    Manifest::update(project, |m| {
        if stage == Stage::Literature {
            if let Some(v) = detail.get("verdict") {
                m.literature_verdict = v.as_str().map(str::to_string);
            }
        }
        m.stages.insert(
            stage,
            StageRecord {
                status,
                mode,
                started_at: Some(started_at),
                finished_at: Some(finished),
                duration_ms: Some(duration_ms),
                usage,
                warnings: warnings.clone(),
                error: error.clone(),
                outputs: outputs.clone(),
            },
        );
    })?;
    match result {
        Ok(_) => {
            rt.events.emit(RunEvent::StageDone {
                stage: stage.to_string(),
            });
            tracing::info!(%stage, duration_ms, "stage done");
            Ok(StageOutcome {
                stage,
                outputs,
                warnings,
                usage,
                detail,
            })
        }
        Err(e) => {
            rt.events.emit(RunEvent::StageFailed {
                stage: stage.to_string(),
                error: e.to_string(),
            });
            tracing::warn!(%stage, error = %e, "stage failed");
            Err(e.in_stage(stage.as_str()))
        }
    }
}

/// Runs one stage after checking its inputs; records it in the manifest.
pub fn run_stage(project: &ProjectDir, rt: &Runtime, stage: Stage, opts: &RunOptions) -> Result<StageOutcome> {
    let _guard = RunGuard::acquire(project)?;
    run_unlocked(project, rt, stage, opts)
}

#[derive(Debug)]
pub struct RunReport {
    pub manifest: Manifest,
    pub outcomes: Vec<StageOutcome>,
    /// The fatal error that halted the chain, if any.
    pub error: Option<Error>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs every stage in dependency order. The literature verdict is
/// informational only; the first stage error halts the chain and marks the
/// remaining stages skipped.
pub fn run_all(project: &ProjectDir, rt: &Runtime, opts: &RunOptions) -> Result<RunReport> {
    let _guard = RunGuard::acquire(project)?;
    if !project.exists(&ArtifactRole::Input) {
        return Err(Error::MissingArtifact(vec![ArtifactRole::Input]));
    }
    let mut outcomes = Vec::new();
    let mut error = None;
    for (i, stage) in Stage::ALL.into_iter().enumerate() {
        match run_unlocked(project, rt, stage, opts) {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                let interrupted = matches!(e.root(), Error::Interrupted);
                let reason = if interrupted {
                    "run interrupted".to_string()
                } else {
                    format!("{stage} failed")
                };
                Manifest::update(project, |m| {
                    if interrupted {
                        m.stages
                            .entry(stage)
                            .or_insert_with(|| StageRecord::skipped(""))
                            .status = StageStatus::Interrupted;
                    }
                    for later in &Stage::ALL[i + 1..] {
                        m.stages.insert(*later, StageRecord::skipped(reason.clone()));
                    }
                })?;
                for later in &Stage::ALL[i + 1..] {
                    rt.events.emit(RunEvent::StageSkipped {
                        stage: later.to_string(),
                        reason: reason.clone(),
                    });
                }
                error = Some(e);
                break;
            }
        }
    }
    Ok(RunReport {
        manifest: Manifest::load(project)?,
        outcomes,
        error,
    })
}

/// Marks every stage still `Running` as interrupted (used on shutdown).
pub fn mark_interrupted(project: &ProjectDir) -> Result<()> {
    Manifest::update(project, |m| {
        for r in m.stages.values_mut() {
            if r.status == StageStatus::Running {
                r.status = StageStatus::Interrupted;
                r.finished_at = Some(Utc::now());
            }
        }
    })
    .map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("results".parse::<Stage>().unwrap(), Stage::Analysis);
        assert_eq!("referee".parse::<Stage>().unwrap(), Stage::Review);
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn guard_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let p = ProjectDir::init(dir.path()).unwrap();
        let g = RunGuard::acquire(&p).unwrap();
        assert!(matches!(RunGuard::acquire(&p), Err(Error::RunActive(_))));
        assert!(is_running(&p));
        drop(g);
        assert!(RunGuard::acquire(&p).is_ok());
    }
}
