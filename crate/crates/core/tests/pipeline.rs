mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::*;
use sciweave_core::events::{CollectingSink, RunEvent};
use sciweave_core::literature::FixedSearch;
use sciweave_core::llm::ChatRequest;
use sciweave_core::paper::PaperConfig;
use sciweave_core::pipeline::{
    is_running, mark_interrupted, run_all, run_stage, set_artifact, Manifest, Mode, RunGuard, RunOptions, Stage,
    StageRecord, StageStatus,
};
use sciweave_core::project::ArtifactRole;
use sciweave_core::runtime::CancelFlag;
use sciweave_core::Error;

fn opts() -> RunOptions {
    RunOptions {
        search: Arc::new(FixedSearch::default()),
        paper: PaperConfig {
            citations: false,
            typesetter: Arc::new(PdfTypesetter::new(1)),
            ..PaperConfig::default()
        },
        ..RunOptions::default()
    }
}

#[test]
fn full_run_records_every_stage_done() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    let sink = Arc::new(CollectingSink::new());
    let rt = runtime_with(FnProvider::new(pipeline_reply)).with_events(sink.clone());
    let report = run_all(&project, &rt, &opts()).unwrap();
    assert!(report.succeeded(), "{:?}", report.error);
    assert_eq!(report.outcomes.len(), 6);
    for stage in Stage::ALL {
        assert_eq!(report.manifest.status(stage), Some(StageStatus::Done), "{stage}");
    }
    assert_eq!(report.manifest.literature_verdict.as_deref(), Some("new"));
    let on_disk = Manifest::load(&project).unwrap();
    assert_eq!(on_disk.stages.len(), 6);

    let kinds: Vec<&str> = sink
        .events()
        .iter()
        .filter(|e| matches!(e, RunEvent::StageStarted { .. } | RunEvent::StageDone { .. }))
        .map(|e| e.kind())
        .collect();
    assert_eq!(kinds.len(), 12);
    assert!(kinds.chunks(2).all(|c| c == ["stage_started", "stage_done"]));
    let referee = project.read_text(&ArtifactRole::Referee).unwrap();
    assert!(referee.contains("Score: 6/9"));
}

#[test]
fn failure_skips_later_stages() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    let provider = FnProvider::new(|req: &ChatRequest| match req.agent.as_str() {
        // methods comes back empty
        "researcher" if req.text().contains("think about the methods") => "   ".to_string(),
        _ => pipeline_reply(req),
    });
    let rt = runtime_with(provider);
    let report = run_all(&project, &rt, &opts()).unwrap();
    let err = report.error.expect("methods should fail");
    assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "methods"), "{err}");
    assert_eq!(report.manifest.status(Stage::Literature), Some(StageStatus::Done));
    assert_eq!(report.manifest.status(Stage::Methods), Some(StageStatus::Failed));
    for later in [Stage::Analysis, Stage::Paper, Stage::Review] {
        assert_eq!(report.manifest.status(later), Some(StageStatus::Skipped));
    }
    assert!(!project.exists(&ArtifactRole::Results));
}

#[test]
fn cancellation_marks_stage_interrupted() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    let cancel = CancelFlag::new();
    let c = cancel.clone();
    let provider = FnProvider::new(move |req: &ChatRequest| {
        if req.agent == "novelty" {
            c.cancel();
        }
        pipeline_reply(req)
    });
    let rt = runtime_with(provider).with_cancel(cancel);
    let report = run_all(&project, &rt, &opts()).unwrap();
    assert!(matches!(report.error.as_ref().map(|e| e.root()), Some(Error::Interrupted)));
    assert_eq!(report.manifest.status(Stage::Idea), Some(StageStatus::Done));
    assert_eq!(report.manifest.status(Stage::Literature), Some(StageStatus::Interrupted));
    assert_eq!(report.manifest.status(Stage::Review), Some(StageStatus::Skipped));
}

#[test]
fn one_run_per_project() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    let rt = runtime_with(FnProvider::new(pipeline_reply));
    let guard = RunGuard::acquire(&project).unwrap();
    assert!(is_running(&project));
    assert!(matches!(run_stage(&project, &rt, Stage::Idea, &opts()), Err(Error::RunActive(_))));
    assert!(matches!(run_all(&project, &rt, &opts()), Err(Error::RunActive(_))));
    drop(guard);
    assert!(!is_running(&project));
    run_stage(&project, &rt, Stage::Idea, &opts()).unwrap();
}

#[test]
fn user_supplied_artifacts_feed_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    let seen = Arc::new(AtomicUsize::new(0));
    let s = seen.clone();
    let provider = FnProvider::new(move |req: &ChatRequest| {
        if req.text().contains("MY OWN IDEA") {
            s.fetch_add(1, Ordering::SeqCst);
        }
        pipeline_reply(req)
    });
    let rt = runtime_with(provider);
    set_artifact(&project, &ArtifactRole::Idea, "MY OWN IDEA\nA hand-written idea.").unwrap();
    run_stage(&project, &rt, Stage::Methods, &opts()).unwrap();
    assert_eq!(seen.load(Ordering::SeqCst), 1);
    assert!(project.exists(&ArtifactRole::Methods));
}

#[test]
fn planned_methods_run_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    project.write_text(&ArtifactRole::Idea, "Idea title\nDo it.").unwrap();
    let provider = FnProvider::new(|req: &ChatRequest| match req.agent.as_str() {
        "planner" => plan_json(&[("researcher", "draft"), ("researcher", "finalize")]),
        "researcher" => "Final methodology text.\nSTATUS: completed".to_string(),
        _ => pipeline_reply(req),
    });
    let rt = runtime_with(provider.clone());
    let mut o = opts();
    o.stage_modes.insert(Stage::Methods, Mode::Planned);
    let out = run_stage(&project, &rt, Stage::Methods, &o).unwrap();
    assert_eq!(out.outputs, vec!["methods.md".to_string()]);
    assert_eq!(project.read_text(&ArtifactRole::Methods).unwrap().trim(), "Final methodology text.");
    assert_eq!(provider.calls_for("researcher"), 2);
    let m = Manifest::load(&project).unwrap();
    assert_eq!(m.stages[&Stage::Methods].mode, Some(Mode::Planned));
}

#[test]
fn shutdown_marks_running_stages() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    let mut m = Manifest::load(&project).unwrap();
    m.stages.insert(
        Stage::Idea,
        StageRecord {
            status: StageStatus::Running,
            mode: Some(Mode::Fast),
            started_at: None,
            finished_at: None,
            duration_ms: None,
            usage: Default::default(),
            warnings: Vec::new(),
            error: None,
            outputs: Vec::new(),
        },
    );
    m.save(&project).unwrap();
    mark_interrupted(&project).unwrap();
    assert_eq!(Manifest::load(&project).unwrap().status(Stage::Idea), Some(StageStatus::Interrupted));
}
