use std::sync::Arc;

use sciweave_core::project::{ArtifactRole, ProjectDir};

#[test]
fn concurrent_writers_never_tear_files() {
    let dir = tempfile::tempdir().unwrap();
    let project = Arc::new(ProjectDir::init(dir.path()).unwrap());
    let payloads: Vec<String> = (0..8).map(|i| format!("{i}").repeat(64 * 1024)).collect();
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let project = project.clone();
            let body = payloads[i].clone();
            std::thread::spawn(move || {
                for _ in 0..25 {
                    project.write_text(&ArtifactRole::Idea, &body).unwrap();
                    project
                        .write_artifact(&ArtifactRole::Plot(format!("t{i}.png")), body.as_bytes())
                        .unwrap();
                }
            })
        })
        .collect();
    let reader = {
        let project = project.clone();
        let payloads = payloads.clone();
        std::thread::spawn(move || {
            for _ in 0..200 {
                if let Ok(text) = project.read_text(&ArtifactRole::Idea) {
                    assert!(payloads.contains(&text), "torn read of {} bytes", text.len());
                }
            }
        })
    };
    for h in handles {
        h.join().unwrap();
    }
    reader.join().unwrap();
    assert_eq!(project.list_plots().unwrap().len(), 8);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .flatten()
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn reopen_sees_everything() {
    let dir = tempfile::tempdir().unwrap();
    let project = ProjectDir::init(dir.path()).unwrap();
    project.write_text(&ArtifactRole::Input, "data").unwrap();
    project.write_artifact(&ArtifactRole::Plot("a.png".into()), b"x").unwrap();
    let again = ProjectDir::open(dir.path()).unwrap();
    let roles: Vec<_> = again.artifacts().unwrap().into_keys().collect();
    assert_eq!(roles, vec![ArtifactRole::Input, ArtifactRole::Plot("a.png".into())]);
}
