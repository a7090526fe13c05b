use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use sciweave_core::llm::{AgentModels, Gateway, ModelId, ScriptedProvider};
use sciweave_core::pipeline::{run_stage, RunOptions, Stage};
use sciweave_core::project::{ArtifactRole, ProjectDir};
use sciweave_core::runtime::Runtime;

const SCRIPT: &str = r#"{
  "strict": false,
  "default_response": "OK",
  "rules": [
    { "agent": "idea_maker", "response": "Halo concentration versus mass\nFit a power law per mass bin.", "repeat": true },
    { "agent": "idea_hater", "response": "Quantify the scatter.", "repeat": true }
  ]
}"#;

fn sciweave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sciweave"))
        .args(args)
        .env_remove("SCIWEAVE_PROJECT")
        .env_remove("SCIWEAVE_SCRIPT")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn idea_matches_the_facade_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, SCRIPT).unwrap();
    let cli_proj = dir.path().join("cli");
    let p = path(&cli_proj);

    assert!(sciweave(&["init", "--project-dir", p]).status.success());
    let input = sciweave(&["set-input", "--project-dir", p, "--text", "Halo catalogue."]);
    assert!(input.status.success(), "{}", stderr(&input));
    let run = sciweave(&["idea", "--project-dir", p, "--mode", "fast", "--script", path(&script)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("wrote idea.md"), "{stdout}");

    let direct = ProjectDir::init(dir.path().join("direct")).unwrap();
    direct.write_text(&ArtifactRole::Input, "Halo catalogue.").unwrap();
    let provider = ScriptedProvider::from_json(SCRIPT).unwrap();
    let rt = Runtime::new(
        Arc::new(Gateway::scripted(Arc::new(provider))),
        AgentModels::uniform(ModelId::scripted()),
    );
    run_stage(&direct, &rt, Stage::Idea, &RunOptions::default()).unwrap();

    let a = std::fs::read(cli_proj.join("idea.md")).unwrap();
    let b = direct.read_artifact(&ArtifactRole::Idea).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_flag_is_a_usage_error_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let proj = dir.path().join("p");
    let out = sciweave(&["init", "--project-dir", path(&proj), "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!proj.exists());

    let out = sciweave(&["init", "--project-dir", path(&proj), "--journal", "nature"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!proj.exists());
}

#[test]
fn unknown_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = path(dir.path());
    sciweave(&["init", "--project-dir", p]);
    sciweave(&["set-input", "--project-dir", p, "--text", "x"]);
    let out = sciweave(&["idea", "--project-dir", p, "--model", "no-such-model"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("idea.md").exists());
}

#[test]
fn missing_inputs_fail_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = path(dir.path());
    sciweave(&["init", "--project-dir", p]);
    sciweave(&["set-input", "--project-dir", p, "--text", "x"]);
    let out = sciweave(&["methods", "--project-dir", p, "--json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&out).lines().last().unwrap()).unwrap();
    assert!(err["message"].as_str().unwrap().contains("idea.md"), "{err}");
}

#[test]
fn user_supplied_idea_is_stored_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let p = path(dir.path());
    let idea_file = dir.path().join("mine.md");
    std::fs::write(&idea_file, "My idea\nDetails.").unwrap();
    sciweave(&["init", "--project-dir", p]);
    let out = sciweave(&["set-idea", "--project-dir", p, path(&idea_file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(dir.path().join("idea.md")).unwrap(), "My idea\nDetails.");
}

#[test]
fn json_mode_emits_event_lines() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, SCRIPT).unwrap();
    let p = dir.path().join("proj");
    let p = path(&p);
    sciweave(&["init", "--project-dir", p]);
    sciweave(&["set-input", "--project-dir", p, "--text", "x"]);
    let out = sciweave(&["idea", "--project-dir", p, "--json", "--script", path(&script)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.first().unwrap()["kind"], "stage_started");
    assert_eq!(lines.last().unwrap()["kind"], "outcome");
    assert!(lines.iter().any(|l| l["kind"] == "stage_done"));
}
