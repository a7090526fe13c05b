use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use reqwest::StatusCode;
use sciweave_core::literature::FixedSearch;
use sciweave_core::llm::{
    AgentModels, ChatProvider, ChatRequest, ChatResponse, Gateway, ModelId, ModelRegistry, ProviderKind, RetryPolicy,
    Usage,
};
use sciweave_core::pipeline::{Manifest, RunOptions, Stage, StageStatus};
use sciweave_core::project::ProjectDir;
use sciweave_server::{Engine, ServeConfig, Server, ServerError};
use serde_json::{json, Value};
use tokio::sync::oneshot;

struct Replies {
    delay: Duration,
    calls: AtomicUsize,
}

impl ChatProvider for Replies {
    fn complete(&self, req: &ChatRequest) -> sciweave_core::Result<ChatResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let text = match req.agent.as_str() {
            "idea_maker" => "Halo concentration versus mass\nFit a power law to the median concentration per mass bin.",
            "idea_hater" => "Say how the scatter will be measured.",
            _ => "OK",
        };
        Ok(ChatResponse {
            text: text.to_string(),
            usage: Usage::default(),
        })
    }
}

struct Harness {
    base: String,
    root: tempfile::TempDir,
    client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<Result<(), ServerError>>,
}

impl Harness {
    async fn start(delay: Duration, token: Option<&str>) -> Self {
        let root = tempfile::tempdir().unwrap();
        let gw = Gateway::new(ModelRegistry::builtin())
            .with_provider(
                ProviderKind::Scripted,
                Arc::new(Replies {
                    delay,
                    calls: AtomicUsize::new(0),
                }),
            )
            .with_retry(RetryPolicy::immediate(1));
        let engine = Engine::new(Arc::new(gw))
            .with_models(AgentModels::uniform(ModelId::scripted()))
            .with_options(RunOptions {
                search: Arc::new(FixedSearch::default()),
                ..RunOptions::default()
            });
        let config = ServeConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            root: root.path().to_path_buf(),
            max_upload: 1024,
            token: token.map(str::to_string),
            drain_timeout: Duration::from_secs(5),
        };
        let server = Server::bind(config, engine).await.unwrap();
        let base = format!("http://{}/api/v1", server.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(server.run(async move {
            let _ = rx.await;
        }));
        Self {
            base,
            root,
            client: reqwest::Client::new(),
            stop: Some(tx),
            task,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn post(&self, path: &str, body: Value) -> reqwest::Response {
        self.client.post(self.url(path)).json(&body).send().await.unwrap()
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.client.get(self.url(path)).send().await.unwrap()
    }

    async fn put(&self, path: &str, body: &'static str) -> reqwest::Response {
        self.client.put(self.url(path)).body(body).send().await.unwrap()
    }

    async fn project_with_input(&self, name: &str) {
        assert_eq!(self.post("/projects", json!({ "name": name })).await.status(), StatusCode::CREATED);
        let r = self
            .put(&format!("/projects/{name}/artifacts/input.md"), "Halo catalogue with masses.")
            .await;
        assert_eq!(r.status(), StatusCode::CREATED);
    }

    async fn shutdown(mut self) -> tempfile::TempDir {
        let _ = self.stop.take().unwrap().send(());
        tokio::time::timeout(Duration::from_secs(20), self.task)
            .await
            .expect("server did not stop")
            .unwrap()
            .unwrap();
        self.root
    }
}

/// Parses an SSE body into (id, event, data) triples.
fn parse_sse(body: &str) -> Vec<(u64, String, Value)> {
    body.split("\n\n")
        .filter_map(|block| {
            let mut id = None;
            let mut event = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = serde_json::from_str(v.trim()).ok();
                }
            }
            Some((id?, event?, data?))
        })
        .collect()
}

async fn wait_finished(h: &Harness, run: &str) -> Value {
    for _ in 0..200 {
        let info: Value = h.get(&format!("/runs/{run}")).await.json().await.unwrap();
        if info["status"] != "running" {
            return info;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("run {run} never finished");
}

#[tokio::test(flavor = "multi_thread")]
async fn idea_run_streams_events_and_writes_artifact() {
    let h = Harness::start(Duration::ZERO, None).await;
    h.project_with_input("halos").await;

    let detail: Value = h.get("/projects/halos").await.json().await.unwrap();
    assert_eq!(detail["stages"]["idea"]["ready"], true);
    assert_eq!(detail["stages"]["methods"]["missing"], json!(["idea.md"]));
    let input = &detail["artifacts"].as_array().unwrap()[0];
    assert_eq!(input["name"], "input.md");
    assert_eq!(input["bytes"], 27);
    assert!(input["modified"].is_string());

    let r = h.post("/projects/halos/runs", json!({ "stage": "idea" })).await;
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let run = r.json::<Value>().await.unwrap()["run_id"].as_str().unwrap().to_string();

    let body = h.get(&format!("/runs/{run}/events")).await.text().await.unwrap();
    let events = parse_sse(&body);
    let kinds: Vec<&str> = events.iter().map(|(_, k, _)| k.as_str()).collect();
    assert_eq!(kinds.first(), Some(&"stage_started"));
    assert_eq!(&kinds[kinds.len() - 2..], ["stage_done", "run_finished"]);
    assert!(kinds.contains(&"agent_turn"));
    let ids: Vec<u64> = events.iter().map(|(id, _, _)| *id).collect();
    assert_eq!(ids, (0..ids.len() as u64).collect::<Vec<_>>(), "ids are gapless");
    assert_eq!(events.last().unwrap().2["status"], "succeeded");

    // a reconnecting client only gets what it missed
    let resumed = h
        .client
        .get(h.url(&format!("/runs/{run}/events")))
        .header("Last-Event-ID", (ids.len() - 3).to_string())
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(parse_sse(&resumed).len(), 2);

    let idea = h.get("/projects/halos/artifacts/idea.md").await;
    assert_eq!(idea.status(), StatusCode::OK);
    assert!(idea.text().await.unwrap().starts_with("Halo concentration versus mass"));

    let missing = h.get("/projects/halos/artifacts/referee.md").await;
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);

    let root = h.shutdown().await;
    let m = Manifest::load(&ProjectDir::open(root.path().join("halos")).unwrap()).unwrap();
    assert_eq!(m.status(Stage::Idea), Some(StageStatus::Done));
}

#[tokio::test(flavor = "multi_thread")]
async fn second_run_on_busy_project_is_rejected() {
    let h = Harness::start(Duration::from_millis(150), None).await;
    h.project_with_input("busy").await;
    let first = h.post("/projects/busy/runs", json!({ "stage": "idea" })).await;
    assert_eq!(first.status(), StatusCode::ACCEPTED);
    let run = first.json::<Value>().await.unwrap()["run_id"].as_str().unwrap().to_string();

    let second = h.post("/projects/busy/runs", json!({ "stage": "all" })).await;
    assert_eq!(second.status(), StatusCode::CONFLICT);
    let upload = h.put("/projects/busy/artifacts/idea.md", "mine").await;
    assert_eq!(upload.status(), StatusCode::CONFLICT);

    assert_eq!(wait_finished(&h, &run).await["status"], "succeeded");
    let again = h.post("/projects/busy/runs", json!({ "stage": "idea" })).await;
    assert_eq!(again.status(), StatusCode::ACCEPTED);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn request_validation() {
    let h = Harness::start(Duration::ZERO, None).await;
    assert_eq!(h.get("/projects/nope").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(h.post("/projects", json!({ "name": "../x" })).await.status(), StatusCode::BAD_REQUEST);

    assert_eq!(h.post("/projects", json!({ "name": "p" })).await.status(), StatusCode::CREATED);
    assert_eq!(h.post("/projects", json!({ "name": "p" })).await.status(), StatusCode::CONFLICT);

    let r = h.post("/projects/p/runs", json!({ "stage": "idea" })).await;
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json::<Value>().await.unwrap()["missing"], json!(["input.md"]));

    let r = h.post("/projects/p/runs", json!({ "stage": "dance" })).await;
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    h.put("/projects/p/artifacts/input.md", "data").await;
    let r = h.post("/projects/p/runs", json!({ "stage": "idea", "model": "no-such-model" })).await;
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    assert_eq!(h.put("/projects/p/artifacts/notes.txt", "x").await.status(), StatusCode::NOT_FOUND);
    let big = h.client.put(h.url("/projects/p/artifacts/idea.md")).body("x".repeat(4096)).send().await.unwrap();
    assert_eq!(big.status(), StatusCode::PAYLOAD_TOO_LARGE);

    assert_eq!(h.get(&format!("/runs/{}", uuid_like())).await.status(), StatusCode::NOT_FOUND);
    h.shutdown().await;
}

fn uuid_like() -> &'static str {
    "00000000-0000-4000-8000-000000000000"
}

#[tokio::test(flavor = "multi_thread")]
async fn keys_endpoint_reports_presence_only() {
    let secret = "sk-test-value-that-must-not-leak";
    // SAFETY: no other test in this binary reads this variable concurrently.
    unsafe { std::env::set_var("ANTHROPIC_API_KEY", secret) };
    let h = Harness::start(Duration::ZERO, None).await;
    let body = h.get("/keys").await.text().await.unwrap();
    assert!(!body.contains(secret));
    let v: Value = serde_json::from_str(&body).unwrap();
    let anthropic = v["keys"]
        .as_array()
        .unwrap()
        .iter()
        .find(|k| k["env"] == "ANTHROPIC_API_KEY")
        .unwrap();
    assert_eq!(anthropic["present"], true);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn bearer_token_is_enforced() {
    let h = Harness::start(Duration::ZERO, Some("s3cret")).await;
    assert_eq!(h.get("/health").await.status(), StatusCode::OK);
    assert_eq!(h.get("/projects").await.status(), StatusCode::UNAUTHORIZED);
    let wrong = h.client.get(h.url("/projects")).bearer_auth("s3cres").send().await.unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    let ok = h.client.get(h.url("/projects")).bearer_auth("s3cret").send().await.unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn port_in_use_is_a_bind_error() {
    let h = Harness::start(Duration::ZERO, None).await;
    let addr: SocketAddr = h.base.trim_start_matches("http://").trim_end_matches("/api/v1").parse().unwrap();
    let config = ServeConfig {
        addr,
        root: h.root.path().to_path_buf(),
        ..ServeConfig::default()
    };
    let err = Server::bind(config, Engine::new(Arc::new(Gateway::new(ModelRegistry::builtin()))))
        .await
        .err()
        .expect("second bind must fail");
    assert!(matches!(err, ServerError::Bind { .. }), "{err}");
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_interrupts_active_run() {
    let h = Harness::start(Duration::from_millis(200), None).await;
    h.project_with_input("slow").await;
    let r = h.post("/projects/slow/runs", json!({ "stage": "idea" })).await;
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    tokio::time::sleep(Duration::from_millis(100)).await;

    let root = h.shutdown().await;
    let project = ProjectDir::open(root.path().join("slow")).unwrap();
    assert_eq!(Manifest::load(&project).unwrap().status(Stage::Idea), Some(StageStatus::Interrupted));
    assert!(!project.exists(&sciweave_core::project::ArtifactRole::Idea));
}
