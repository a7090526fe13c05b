use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use uuid::Uuid;

use sciweave_core::llm::ProviderKind;
use sciweave_core::pipeline::{
    is_running, mark_interrupted, missing_inputs, run_all, run_stage, Manifest, RunSettings, Stage,
};
use sciweave_core::project::{ArtifactRole, ProjectDir};
use sciweave_core::runtime::Runtime;
use sciweave_core::Error as CoreError;

use crate::error::ApiError;
use crate::runs::{Run, RunSink, RunStatus};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;
type St = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload;
    let api = Router::new()
        .route("/keys", get(keys))
        .route("/models", get(models))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{name}", get(project_detail))
        .route("/projects/{name}/artifacts/{*path}", get(get_artifact).put(put_artifact))
        .route("/projects/{name}/runs", get(list_runs).post(start_run))
        .route("/runs/{id}", get(run_detail))
        .route("/runs/{id}/events", get(run_events))
        .route("/runs/{id}/cancel", post(cancel_run))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(limit));
    Router::new().nest("/api/v1", api).with_state(state)
}

async fn require_token(State(state): St, req: Request, next: Next) -> Response {
    let Some(expected) = &state.config.token else {
        return next.run(req).await;
    };
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(p) if constant_time_eq(p.as_bytes(), expected.as_bytes()) => next.run(req).await,
        _ => ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response(),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

/// Which provider credentials are configured. Only presence is reported.
async fn keys() -> Json<Value> {
    let keys: Vec<Value> = ProviderKind::HOSTED
        .iter()
        .filter_map(|k| {
            let env = k.key_env()?;
            let present = std::env::var(env).is_ok_and(|v| !v.trim().is_empty());
            Some(json!({ "provider": k.to_string(), "env": env, "present": present }))
        })
        .collect();
    Json(json!({ "keys": keys }))
}

async fn models(State(state): St) -> Json<Value> {
    let gw = &state.engine.gateway;
    let models: Vec<Value> = gw
        .registry()
        .iter()
        .map(|m| {
            json!({
                "name": m.id.name,
                "provider": m.id.provider.to_string(),
                "multimodal": m.multimodal,
                "available": gw.has_provider(m.id.provider),
            })
        })
        .collect();
    Json(json!({ "models": models }))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn open_project(state: &AppState, name: &str) -> ApiResult<ProjectDir> {
    if !valid_name(name) {
        return Err(ApiError::bad_request(format!("invalid project name '{name}'")));
    }
    let dir = state.config.root.join(name);
    if !dir.is_dir() {
        return Err(ApiError::not_found(format!("project '{name}'")));
    }
    ProjectDir::open(dir).map_err(|e| match e {
        CoreError::NotADirectory(_) | CoreError::NotFound(_) => ApiError::not_found(format!("project '{name}'")),
        e => e.into(),
    })
}

fn busy(state: &AppState, name: &str, project: &ProjectDir) -> bool {
    state.runs.active_for(name).is_some() || is_running(project)
}

async fn list_projects(State(state): St) -> ApiResult<Json<Value>> {
    let mut names = Vec::new();
    let entries = std::fs::read_dir(&state.config.root)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if valid_name(&name) && ProjectDir::open(entry.path()).is_ok() {
            names.push(name);
        }
    }
    names.sort();
    Ok(Json(json!({ "projects": names })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    name: String,
}

async fn create_project(State(state): St, Json(body): Json<CreateProject>) -> ApiResult<impl IntoResponse> {
    if !valid_name(&body.name) {
        return Err(ApiError::bad_request(format!("invalid project name '{}'", body.name)));
    }
    let dir = state.config.root.join(&body.name);
    if dir.exists() {
        return Err(ApiError::conflict(format!("project '{}' already exists", body.name)));
    }
    let project = ProjectDir::init(&dir)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "name": body.name, "created_at": project.created_at() })),
    ))
}

async fn project_detail(State(state): St, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let project = open_project(&state, &name)?;
    let artifacts: Vec<Value> = project
        .artifacts()?
        .into_iter()
        .map(|(role, rel)| {
            let meta = std::fs::metadata(project.root().join(rel)).ok();
            json!({
                "name": role.file_name(),
                "bytes": meta.as_ref().map(|m| m.len()),
                "modified": meta
                    .and_then(|m| m.modified().ok())
                    .map(chrono::DateTime::<chrono::Utc>::from),
            })
        })
        .collect();
    let manifest = Manifest::load(&project)?;
    let opts = &state.engine.options;
    let stages: BTreeMap<&str, Value> = Stage::ALL
        .iter()
        .map(|s| {
            let missing: Vec<String> = missing_inputs(&project, *s, opts).iter().map(|r| r.file_name()).collect();
            (
                s.as_str(),
                json!({ "ready": missing.is_empty(), "missing": missing, "status": manifest.status(*s) }),
            )
        })
        .collect();
    Ok(Json(json!({
        "name": name,
        "created_at": project.created_at(),
        "artifacts": artifacts,
        "running": busy(&state, &name, &project),
        "active_run": state.runs.active_for(&name).map(|r| r.id),
        "stages": stages,
        "manifest": manifest,
    })))
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit_once('.').map(|(_, ext)| ext) {
        Some("md") => "text/markdown; charset=utf-8",
        Some("tex") => "application/x-tex; charset=utf-8",
        Some("bib") => "application/x-bibtex; charset=utf-8",
        Some("jsonl") => "application/x-ndjson",
        Some("pdf") => "application/pdf",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn role_of(path: &str) -> ApiResult<ArtifactRole> {
    ArtifactRole::from_file_name(path).ok_or_else(|| ApiError::not_found(format!("no artifact named '{path}'")))
}

async fn get_artifact(State(state): St, Path((name, path)): Path<(String, String)>) -> ApiResult<Response> {
    let project = open_project(&state, &name)?;
    let role = role_of(&path)?;
    let bytes = project.read_artifact(&role)?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn put_artifact(
    State(state): St,
    Path((name, path)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let project = open_project(&state, &name)?;
    let role = role_of(&path)?;
    if role == ArtifactRole::Transcript {
        return Err(ApiError::bad_request("the transcript is written by the engine only"));
    }
    if role.is_textual() && std::str::from_utf8(&body).is_err() {
        return Err(ApiError::bad_request(format!("{path} must be UTF-8 text")));
    }
    if busy(&state, &name, &project) {
        return Err(ApiError::conflict(format!("a run is active for project '{name}'")));
    }
    project.write_artifact(&role, &body)?;
    Ok((StatusCode::CREATED, Json(json!({ "artifact": role.file_name(), "bytes": body.len() }))))
}

#[derive(Deserialize)]
struct StartRun {
    /// A stage name or `all`.
    stage: String,
    #[serde(flatten)]
    settings: RunSettings,
}

async fn start_run(
    State(state): St,
    Path(name): Path<String>,
    Json(body): Json<StartRun>,
) -> ApiResult<impl IntoResponse> {
    let project = open_project(&state, &name)?;
    let target = match body.stage.as_str() {
        "all" => None,
        s => Some(s.parse::<Stage>()?),
    };
    let engine = &state.engine;
    let models = body
        .settings
        .models(engine.gateway.registry())?
        .unwrap_or_else(|| engine.models.clone());
    let opts = body.settings.apply(engine.options.clone());
    let missing = match target {
        Some(stage) => missing_inputs(&project, stage, &opts),
        None if !project.exists(&ArtifactRole::Input) => vec![ArtifactRole::Input],
        None => Vec::new(),
    };
    if !missing.is_empty() {
        return Err(CoreError::MissingArtifact(missing).into());
    }
    if is_running(&project) {
        return Err(ApiError::conflict(format!("a run is active for project '{name}'")));
    }
    let label = target.map_or("all", Stage::as_str);
    let run = state
        .runs
        .start(&name, label)
        .ok_or_else(|| ApiError::conflict(format!("a run is active for project '{name}'")))?;
    tracing::info!(project = %name, target = label, run = %run.id, "run started");

    let rt = Runtime::new(engine.gateway.clone(), models)
        .with_events(Arc::new(RunSink(run.clone())))
        .with_cancel(run.cancel.clone());
    let registry = state.runs.clone();
    let id = run.id;
    tokio::task::spawn_blocking(move || {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match target {
            Some(stage) => run_stage(&project, &rt, stage, &opts).map(|_| ()),
            None => run_all(&project, &rt, &opts).and_then(|r| r.error.map_or(Ok(()), Err)),
        }));
        let (status, error) = match result {
            Ok(Ok(())) => (RunStatus::Succeeded, None),
            Ok(Err(e)) if matches!(e.root(), CoreError::Interrupted) => {
                let _ = mark_interrupted(&project);
                (RunStatus::Interrupted, Some(e.to_string()))
            }
            Ok(Err(e)) => (RunStatus::Failed, Some(e.to_string())),
            Err(_) => {
                let _ = mark_interrupted(&project);
                (RunStatus::Failed, Some("run panicked".to_string()))
            }
        };
        tracing::info!(run = %run.id, ?status, "run finished");
        run.finish(status, error);
        registry.release(&run);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": id, "target": label }))))
}

async fn list_runs(State(state): St, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    open_project(&state, &name)?;
    Ok(Json(json!({ "runs": state.runs.list(Some(&name)) })))
}

fn find_run(state: &AppState, id: &str) -> ApiResult<Arc<Run>> {
    let id: Uuid = id.parse().map_err(|_| ApiError::not_found(format!("run '{id}'")))?;
    state.runs.get(&id).ok_or_else(|| ApiError::not_found(format!("run '{id}'")))
}

async fn run_detail(State(state): St, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let run = find_run(&state, &id)?;
    Ok(Json(serde_json::to_value(run.info()).unwrap_or(Value::Null)))
}

async fn cancel_run(State(state): St, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let run = find_run(&state, &id)?;
    if run.status() != RunStatus::Running {
        return Err(ApiError::conflict("run already finished"));
    }
    run.cancel.cancel();
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run.id, "cancelling": true }))))
}

#[derive(Deserialize)]
struct EventsQuery {
    /// First sequence number to deliver.
    from: Option<usize>,
}

async fn run_events(
    State(state): St,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let run = find_run(&state, &id)?;
    // resuming clients send the last id they saw
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok())
        .map(|seq| seq + 1);
    let from = resume.or(q.from).unwrap_or(0);
    Ok(Sse::new(event_stream(run, from)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

/// Replays the log from `from`, then follows it until the run finishes.
fn event_stream(run: Arc<Run>, from: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = run.subscribe();
    stream::unfold((run, rx, from, false), |(run, mut rx, next, done)| async move {
        if done {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let (batch, finished) = run.events_from(next);
            if !batch.is_empty() {
                let next = next + batch.len();
                let events: Vec<Result<Event, Infallible>> = batch
                    .into_iter()
                    .map(|e| {
                        Ok(Event::default()
                            .id(e.seq.to_string())
                            .event(e.kind)
                            .data(e.data.to_string()))
                    })
                    .collect();
                // `finished` was read together with the batch, so nothing is lost
                return Some((stream::iter(events), (run, rx, next, finished)));
            }
            if finished || rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}
