//! Python bindings: projects, stage runs and a few pure helpers.
//!
//! Structured results (manifests, outcomes, events) cross the boundary as
//! JSON and are decoded with the stdlib `json` module.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use sciweave_core::events::CollectingSink;
use sciweave_core::llm::{AgentModels, Gateway, ModelId, ScriptedProvider};
use sciweave_core::pipeline::{self, Manifest, RunOptions, RunSettings, Stage};
use sciweave_core::project::{ArtifactRole, ProjectDir};
use sciweave_core::review;
use sciweave_core::runtime::Runtime;
use sciweave_core::Error;

create_exception!(sciweave, SciweaveError, PyException);
create_exception!(sciweave, MissingArtifactError, SciweaveError);
create_exception!(sciweave, RunActiveError, SciweaveError);
create_exception!(sciweave, StageError, SciweaveError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::MissingArtifact(_) => MissingArtifactError::new_err(msg),
        Error::RunActive(_) => RunActiveError::new_err(msg),
        Error::InvalidRequest(_) | Error::UnknownModel(_) | Error::PathEscape(_) => PyValueError::new_err(msg),
        _ if matches!(e, Error::Stage { .. }) => StageError::new_err(msg),
        _ => SciweaveError::new_err(msg),
    }
}

fn json_loads<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SciweaveError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn role(name: &str) -> PyResult<ArtifactRole> {
    ArtifactRole::from_file_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown artifact '{name}'")))
}

/// A project directory.
#[pyclass(module = "sciweave", frozen)]
struct Project {
    inner: ProjectDir,
}

#[pymethods]
impl Project {
    /// Opens `path`, creating the project when `create` is set.
    #[new]
    #[pyo3(signature = (path, create = true))]
    fn new(path: PathBuf, create: bool) -> PyResult<Self> {
        let inner = if create { ProjectDir::init(&path) } else { ProjectDir::open(&path) };
        Ok(Self { inner: inner.map_err(to_py)? })
    }

    #[getter]
    fn root(&self) -> PathBuf {
        self.inner.root().to_path_buf()
    }

    /// File names of every artifact present.
    fn artifacts(&self) -> PyResult<Vec<String>> {
        Ok(self.inner.artifacts().map_err(to_py)?.keys().map(|r| r.file_name()).collect())
    }

    fn exists(&self, name: &str) -> PyResult<bool> {
        Ok(self.inner.exists(&role(name)?))
    }

    fn read_text(&self, name: &str) -> PyResult<String> {
        self.inner.read_text(&role(name)?).map_err(to_py)
    }

    fn read_bytes<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.read_artifact(&role(name)?).map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    /// Supplies an artifact by hand (e.g. your own idea.md).
    fn write_text(&self, name: &str, text: &str) -> PyResult<PathBuf> {
        pipeline::set_artifact(&self.inner, &role(name)?, text).map_err(to_py)
    }

    /// Names of inputs `stage` still needs.
    fn missing_inputs(&self, stage: &str) -> PyResult<Vec<String>> {
        let stage: Stage = stage.parse().map_err(to_py)?;
        let missing = pipeline::missing_inputs(&self.inner, stage, &RunOptions::default());
        Ok(missing.iter().map(|r| r.file_name()).collect())
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m = Manifest::load(&self.inner).map_err(to_py)?;
        json_loads(py, &m)
    }

    fn __repr__(&self) -> String {
        format!("Project({:?})", self.inner.root())
    }
}

/// Runs stages with fixed settings. Without `script`, providers are taken
/// from the API keys in the environment.
#[pyclass(module = "sciweave", frozen)]
struct Pipeline {
    gateway: Arc<Gateway>,
    models: AgentModels,
    options: RunOptions,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (*, script = None, model = None, mode = None, journal = None, citations = None, max_rounds = None, max_fails = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        script: Option<PathBuf>,
        model: Option<String>,
        mode: Option<&str>,
        journal: Option<&str>,
        citations: Option<bool>,
        max_rounds: Option<usize>,
        max_fails: Option<usize>,
    ) -> PyResult<Self> {
        let settings = RunSettings {
            mode: mode.map(str::parse).transpose().map_err(to_py)?,
            model,
            journal: journal.map(str::parse).transpose().map_err(to_py)?,
            citations,
            max_rounds,
            max_fails,
        };
        let (gateway, models) = match script {
            Some(path) => (
                Gateway::scripted(Arc::new(ScriptedProvider::from_file(&path).map_err(to_py)?)),
                AgentModels::uniform(ModelId::scripted()),
            ),
            None => (Gateway::from_env(), AgentModels::stock()),
        };
        let models = settings.models(gateway.registry()).map_err(to_py)?.unwrap_or(models);
        Ok(Self {
            gateway: Arc::new(gateway),
            models,
            options: settings.apply(RunOptions::default()),
        })
    }

    /// Runs one stage; returns its outcome with the emitted events under
    /// `"events"`. The GIL is released while the stage runs.
    fn run_stage<'py>(&self, py: Python<'py>, project: &Project, stage: &str) -> PyResult<Bound<'py, PyAny>> {
        let stage: Stage = stage.parse().map_err(to_py)?;
        let sink = Arc::new(CollectingSink::new());
        let rt = Runtime::new(self.gateway.clone(), self.models.clone()).with_events(sink.clone());
        let dir = project.inner.clone();
        let opts = self.options.clone();
        let outcome = py
            .detach(move || pipeline::run_stage(&dir, &rt, stage, &opts))
            .map_err(to_py)?;
        let mut v = serde_json::to_value(&outcome).map_err(|e| SciweaveError::new_err(e.to_string()))?;
        v["events"] = serde_json::to_value(sink.events()).unwrap_or_default();
        json_loads(py, &v)
    }

    /// Runs every stage in order; returns the manifest. A stage failure is
    /// recorded in the manifest and also raised.
    fn run_all<'py>(&self, py: Python<'py>, project: &Project) -> PyResult<Bound<'py, PyAny>> {
        let rt = Runtime::new(self.gateway.clone(), self.models.clone());
        let dir = project.inner.clone();
        let opts = self.options.clone();
        let report = py.detach(move || pipeline::run_all(&dir, &rt, &opts)).map_err(to_py)?;
        if let Some(e) = report.error {
            return Err(to_py(e));
        }
        json_loads(py, &report.manifest)
    }
}

/// Stage names in dependency order.
#[pyfunction]
fn stages() -> Vec<&'static str> {
    Stage::ALL.iter().map(|s| s.as_str()).collect()
}

/// Score 0..9 from a referee report, or None.
#[pyfunction]
fn extract_score(review_text: &str) -> PyResult<Option<u8>> {
    review::extract_score(review_text).map_err(|n| PyValueError::new_err(format!("score {n} is outside 0..9")))
}

/// Text between the REVIEW markers of a model response.
#[pyfunction]
fn parse_review(response: &str) -> Option<String> {
    review::parse_review(response)
}

#[pymodule]
fn sciweave(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Project>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(stages, m)?)?;
    m.add_function(wrap_pyfunction!(extract_score, m)?)?;
    m.add_function(wrap_pyfunction!(parse_review, m)?)?;
    let py = m.py();
    m.add("SciweaveError", py.get_type::<SciweaveError>())?;
    m.add("MissingArtifactError", py.get_type::<MissingArtifactError>())?;
    m.add("RunActiveError", py.get_type::<RunActiveError>())?;
    m.add("StageError", py.get_type::<StageError>())?;
    Ok(())
}
