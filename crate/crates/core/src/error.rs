use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::control::PlanError;
use crate::project::ArtifactRole;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // project store
    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("permission denied: {0}")]
    PermissionDenied(PathBuf),
    #[error("artifact not found: {0}")]
    NotFound(String),
    #[error("path escapes project root: {0}")]
    PathEscape(String),
    #[error("missing artifacts: {}", list_roles(.0))]
    MissingArtifact(Vec<ArtifactRole>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // llm gateway
    #[error("authentication failed for {0}")]
    Auth(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider error{}: {message}", .status.map(|s| format!(" ({s})")).unwrap_or_default())]
    Provider {
        status: Option<u16>,
        message: String,
        transient: bool,
    },
    #[error("scripted provider has no rule for request from agent '{agent}'")]
    ScriptExhausted { agent: String },
    #[error("model '{0}' does not accept image input")]
    UnsupportedModality(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    // planning & control
    #[error("malformed plan after {attempts} attempts: {reason}")]
    MalformedPlan { attempts: usize, reason: PlanError },
    #[error("plan rejected: {0}")]
    Plan(#[from] PlanError),
    #[error("round cap of {0} messages exceeded")]
    RoundCapExceeded(usize),
    #[error("session aborted: {0}")]
    Aborted(String),

    // stages
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("the idea produced by the final maker turn is empty")]
    EmptyIdea,
    #[error("section '{0}' came back empty")]
    EmptySection(String),
    #[error("figure '{0}' was dropped during insertion")]
    FigureDropped(String),
    #[error("search port unavailable: {0}")]
    SearchPortDown(String),
    #[error("could not parse {what}: {detail}")]
    Unparseable { what: &'static str, detail: String },
    #[error("term '{0}' is not in the vocabulary")]
    OffVocabulary(String),
    #[error("vocabulary format error at line {line}: {detail}")]
    VocabularyFormat { line: usize, detail: String },
    #[error("script timed out after {0:?}")]
    Timeout(Duration),
    #[error("failed to spawn '{command}': {detail}")]
    Spawn { command: String, detail: String },
    #[error("corrupt pdf: {0}")]
    CorruptPdf(String),
    #[error("response has no REVIEW block")]
    MissingReviewBlock,
    #[error("citation search unavailable: {0}")]
    CiteSearchDown(String),
    #[error("malformed bibtex for {0}")]
    BadBibtex(String),
    #[error("compilation of version {0} failed")]
    CompileFailed(u8),
    #[error("fetch failed for {url}: {detail}")]
    FetchFailed { url: String, detail: String },
    #[error("run interrupted")]
    Interrupted,
    #[error("a run is already active for project {0}")]
    RunActive(PathBuf),
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn list_roles(roles: &[ArtifactRole]) -> String {
    roles
        .iter()
        .map(|r| r.file_name())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        match source.kind() {
            std::io::ErrorKind::PermissionDenied => Error::PermissionDenied(path),
            _ => Error::Io { path, source },
        }
    }

    /// Whether a gateway call that produced this error may be retried.
    pub fn is_transient(&self) -> bool {
        match self {
            Error::RateLimited { .. } => true,
            Error::Provider { transient, .. } => *transient,
            _ => false,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.into(),
                source: Box::new(e),
            },
        }
    }

    /// Innermost error once stage tags are peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
