mod common;

use std::sync::Arc;

use common::*;
use sciweave_core::llm::ChatRequest;
use sciweave_core::paper::{run_paper, PaperConfig, FIXER_AGENT};
use sciweave_core::project::{ArtifactRole, PaperVersion, ProjectDir};
use sciweave_core::runtime::{Conversation, Runtime};

fn project_with(plots: usize) -> (tempfile::TempDir, ProjectDir) {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture_project(dir.path());
    project.write_text(&ArtifactRole::Idea, "Halo concentration\nWe study it.").unwrap();
    project.write_text(&ArtifactRole::Methods, "Bin and fit.").unwrap();
    project.write_text(&ArtifactRole::Results, "Slope is -0.1.").unwrap();
    for i in 0..plots {
        project.write_artifact(&ArtifactRole::Plot(format!("p{i}.png")), &fake_png(i)).unwrap();
    }
    (dir, project)
}

fn cfg(ts: PdfTypesetter) -> PaperConfig {
    PaperConfig {
        citations: false,
        typesetter: Arc::new(ts),
        ..PaperConfig::default()
    }
}

fn runtime(provider: Arc<FnProvider>) -> Runtime {
    runtime_with(provider)
}

fn echo() -> Arc<FnProvider> {
    FnProvider::new(|req: &ChatRequest| paper_reply(req).unwrap_or_default())
}

#[test]
fn four_checkpoints_with_pdfs() {
    let (_d, project) = project_with(3);
    let provider = echo();
    let rt = runtime(provider.clone());
    let mut convo = Conversation::new(&rt, Some(&project), "paper");
    let out = run_paper(&project, &cfg(PdfTypesetter::new(2)), &mut convo).unwrap();
    assert_eq!(out.checkpoints.len(), 4);
    for v in PaperVersion::ALL {
        assert!(project.exists(&ArtifactRole::PaperTex(v)));
        assert!(project.exists(&ArtifactRole::PaperPdf(v)));
    }
    assert_eq!(provider.calls_for(FIXER_AGENT), 0);
    assert!(out.keywords.is_some());
    let v1 = project.read_text(&ArtifactRole::PaperTex(PaperVersion::new(1).unwrap())).unwrap();
    assert!(v1.contains("Concentration of simulated halos"));
    assert!(v1.contains("\\begin{document}"));
    // citations off: v3 is v2 renumbered
    assert!(out.citations.is_none());
}

#[test]
fn failed_compile_gets_one_fixer_round() {
    let (_d, project) = project_with(1);
    let provider = echo();
    let rt = runtime(provider.clone());
    let mut convo = Conversation::new(&rt, Some(&project), "paper");
    let out = run_paper(&project, &cfg(PdfTypesetter::failing(1, &[3])), &mut convo).unwrap();
    assert_eq!(provider.calls_for(FIXER_AGENT), 1);
    let cp = &out.checkpoints[2];
    assert!(cp.fixer_used && !cp.pdf);
    assert!(convo.warnings().iter().any(|w| w.contains("3")));
    let v3 = project.read_text(&ArtifactRole::PaperTex(PaperVersion::new(3).unwrap())).unwrap();
    assert!(v3.contains("fixed"), "fixer output should replace the failing source");
    assert!(project.exists(&ArtifactRole::PaperPdf(PaperVersion::new(4).unwrap())));
}

#[test]
fn polish_that_drops_a_figure_is_rejected() {
    let (_d, project) = project_with(2);
    let provider = FnProvider::new(|req: &ChatRequest| {
        if req.agent == "paper_writer" && last(req).contains("Rewrite and polish") {
            return "A shorter Results section with no figures.".to_string();
        }
        paper_reply(req).unwrap_or_default()
    });
    let rt = runtime(provider);
    let mut convo = Conversation::new(&rt, Some(&project), "paper");
    let out = run_paper(&project, &cfg(PdfTypesetter::new(1)), &mut convo).unwrap();
    assert_eq!(out.rejected_polish, vec!["v2:Results".to_string()]);
    let v2 = project.read_text(&ArtifactRole::PaperTex(PaperVersion::new(2).unwrap())).unwrap();
    for f in &out.draft.figures {
        assert_eq!(f.count_in(&v2), 1);
    }
}

#[test]
fn citation_outage_skips_only_that_section() {
    let (_d, project) = project_with(1);
    let rt = runtime(echo());
    let bib = Arc::new(StubBib::new(&[]));
    let cfg = PaperConfig {
        citations: true,
        cite_search: Some(Arc::new(StubCite::new(vec![
            None,
            Some(vec![hit("2402.12345", Some("This section discusses the halo sample."))]),
        ]))),
        bib_fetch: Some(bib.clone()),
        ..cfg(PdfTypesetter::new(1))
    };
    let mut convo = Conversation::new(&rt, Some(&project), "paper");
    let out = run_paper(&project, &cfg, &mut convo).unwrap();
    let report = out.citations.unwrap();
    assert_eq!(report.skipped_sections, vec!["Introduction".to_string()]);
    assert_eq!(report.entries, 1);
    let v3 = project.read_text(&ArtifactRole::PaperTex(PaperVersion::new(3).unwrap())).unwrap();
    assert!(v3.contains("sample~\\cite{ref2402_12345}."), "{v3}");
    let bibfile = project.read_text(&ArtifactRole::PaperBib).unwrap();
    assert!(bibfile.contains("eprint={2402.12345}"));
}

#[test]
fn duplicate_plot_files_appear_once() {
    let (_d, project) = project_with(2);
    project.write_artifact(&ArtifactRole::Plot("p0_again.png".into()), &fake_png(0)).unwrap();
    let rt = runtime(echo());
    let mut convo = Conversation::new(&rt, Some(&project), "paper");
    let out = run_paper(&project, &cfg(PdfTypesetter::new(1)), &mut convo).unwrap();
    assert_eq!(out.draft.figures.len(), 2);
    assert_eq!(out.duplicate_plots.len(), 1);
}
