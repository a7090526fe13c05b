#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream};
use sciweave_core::llm::{
    AgentModels, ChatProvider, ChatRequest, ChatResponse, Gateway, ModelId, ModelRegistry, ProviderKind,
    ScriptedProvider, Usage,
};
use sciweave_core::paper::{BibFetchPort, CiteHit, CiteSearchPort, TypesetReport, Typesetter};
use sciweave_core::project::{ArtifactRole, ProjectDir};
use sciweave_core::runtime::Runtime;
use sciweave_core::{Error, Result};

pub const INPUT: &str = "We have a catalogue of 10,000 simulated dark matter halos with mass, concentration \
and spin. Study how concentration depends on mass.";

/// Provider answering through a closure; records every request.
pub struct FnProvider {
    respond: Box<dyn Fn(&ChatRequest) -> String + Send + Sync>,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl FnProvider {
    pub fn new(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self {
            respond: Box::new(f),
            seen: Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn calls_for(&self, agent: &str) -> usize {
        self.seen.lock().unwrap().iter().filter(|r| r.agent == agent).count()
    }
}

impl ChatProvider for FnProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        self.seen.lock().unwrap().push(req.clone());
        Ok(ChatResponse {
            text: (self.respond)(req),
            usage: Usage::default(),
        })
    }
}

pub fn runtime_with(provider: Arc<dyn ChatProvider>) -> Runtime {
    let gw = Gateway::new(ModelRegistry::builtin())
        .with_provider(ProviderKind::Scripted, provider)
        .with_retry(sciweave_core::llm::RetryPolicy::immediate(1));
    Runtime::new(Arc::new(gw), AgentModels::uniform(ModelId::scripted()))
}

pub fn scripted_runtime(provider: Arc<ScriptedProvider>) -> Runtime {
    Runtime::new(
        Arc::new(Gateway::scripted(provider)),
        AgentModels::uniform(ModelId::scripted()),
    )
}

pub fn fixture_project(dir: &Path) -> ProjectDir {
    let p = ProjectDir::init(dir).unwrap();
    p.write_text(&ArtifactRole::Input, INPUT).unwrap();
    p
}

/// Text of the last message of a request.
pub fn last(req: &ChatRequest) -> String {
    req.messages.last().map(|m| m.content()).unwrap_or_default()
}

pub fn plan_json(steps: &[(&str, &str)]) -> String {
    let steps: Vec<serde_json::Value> = steps
        .iter()
        .map(|(agent, task)| {
            serde_json::json!({"sub_task": task, "sub_task_agent": agent, "bullet_points": ["do it"]})
        })
        .collect();
    format!("```json\n{}\n```", serde_json::json!({ "steps": steps }))
}

pub const ENGINEER_CODE: &str = "```python\nprint('fit ok')\nwith open('fit.png', 'wb') as f:\n    f.write(b'\\x89PNG\\r\\n\\x1a\\n' + b'fit' * 8)\n```";

pub const REVIEW_REPLY: &str = "\\begin{REVIEW}\nThe analysis is sound but narrow.\nScore: 6\n\\end{REVIEW}";

fn between<'t>(text: &'t str, start: &str, end: &str) -> &'t str {
    let a = text.find(start).map(|i| i + start.len()).unwrap_or(0);
    let b = text[a..].find(end).map(|i| a + i).unwrap_or(text.len());
    &text[a..b]
}

/// Echoing answers for every paper-stage agent: figure insertion returns the
/// section plus all listed figures, polish passes return their input.
pub fn paper_reply(req: &ChatRequest) -> Option<String> {
    let msg = last(req);
    let reply = match req.agent.as_str() {
        "paper_writer" => {
            if msg.contains("Write a title and an abstract") {
                "\\begin{Title}\nConcentration of simulated halos\n\\end{Title}\n\\begin{Abstract}\nWe measure the concentration-mass relation.\n\\end{Abstract}".to_string()
            } else if msg.contains("Insert each of the following figures") {
                let results = between(&msg, "Results section:\n", "\n\nInsert each");
                let figures = msg.split("Respond with the full updated section only.\n\n").nth(1).unwrap_or("");
                format!("{results}\n\n{figures}")
            } else if msg.contains("Rewrite and polish") || msg.contains("Make a final pass") {
                msg.split("Respond with the section body only.\n\n").nth(1).unwrap_or("").to_string()
            } else if msg.contains("Reflect on its weaknesses") {
                "Concentration falls with mass, as shown below.".to_string()
            } else {
                "This section discusses the halo sample.".to_string()
            }
        }
        "caption_writer" => "Concentration as a function of halo mass.".to_string(),
        "keyword_selector" => {
            let list = msg.rsplit("\n\n").next().unwrap_or("");
            list.lines().take(2).collect::<Vec<_>>().join("\n")
        }
        "latex_fixer" => "```latex\n\\documentclass{article}\n\\begin{document}\nfixed\n\\end{document}\n```".to_string(),
        "reviewer" => REVIEW_REPLY.to_string(),
        _ => return None,
    };
    Some(reply)
}

/// Answers for a whole scripted run, stage by stage.
pub fn pipeline_reply(req: &ChatRequest) -> String {
    if let Some(r) = paper_reply(req) {
        return r;
    }
    let msg = req.text();
    match req.agent.as_str() {
        "idea_maker" => "Concentration-mass relation of simulated halos\nWe measure concentration versus mass. \
We fit a power law. We compare with published relations. We quantify the scatter. We discuss the slope."
            .to_string(),
        "idea_hater" => "The idea is reasonable but the scatter analysis is vague.".to_string(),
        "novelty" => "DECISION: NEW".to_string(),
        "literature_summary" => "# Literature\n\nNo prior work measures exactly this relation.".to_string(),
        "researcher" if msg.contains("think about the methods") => {
            "We bin halos by mass and fit a power law to the median concentration.".to_string()
        }
        "researcher" => "The concentration decreases with mass with slope -0.1.\nSTATUS: completed".to_string(),
        "planner" => plan_json(&[("engineer", "Fit the relation and plot it"), ("researcher", "Write the results")]),
        "plan_reviewer" => "The plan is fine.".to_string(),
        "engineer" => ENGINEER_CODE.to_string(),
        other => format!("unexpected agent {other}"),
    }
}

/// Builds an in-memory PDF with `pages` small text pages.
pub fn pdf_bytes(pages: usize) -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let font_id = doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Helvetica",
    });
    let resources_id = doc.add_object(dictionary! {
        "Font" => dictionary! { "F1" => font_id },
    });
    let mut kids: Vec<Object> = Vec::new();
    for i in 0..pages {
        let content = Content {
            operations: vec![
                Operation::new("BT", vec![]),
                Operation::new("Tf", vec!["F1".into(), 12.into()]),
                Operation::new("Td", vec![20.into(), 100.into()]),
                Operation::new("Tj", vec![Object::string_literal(format!("Page {}", i + 1))]),
                Operation::new("ET", vec![]),
            ],
        };
        let content_id = doc.add_object(Stream::new(dictionary! {}, content.encode().unwrap()));
        let page_id = doc.add_object(dictionary! {
            "Type" => "Page",
            "Parent" => pages_id,
            "Contents" => content_id,
        });
        kids.push(page_id.into());
    }
    let pages_dict = dictionary! {
        "Type" => "Pages",
        "Kids" => kids,
        "Count" => pages as i64,
        "Resources" => resources_id,
        "MediaBox" => vec![0.into(), 0.into(), 144.into(), 144.into()],
    };
    doc.objects.insert(pages_id, Object::Dictionary(pages_dict));
    let catalog_id = doc.add_object(dictionary! {
        "Type" => "Catalog",
        "Pages" => pages_id,
    });
    doc.trailer.set("Root", catalog_id);
    let mut buf = Vec::new();
    doc.save_to(&mut buf).unwrap();
    buf
}

/// Typesetter that emits a small PDF, failing for the listed versions.
#[derive(Debug, Default)]
pub struct PdfTypesetter {
    pub pages: usize,
    pub fail_versions: BTreeSet<u8>,
    pub calls: Mutex<Vec<String>>,
}

impl PdfTypesetter {
    pub fn new(pages: usize) -> Self {
        Self {
            pages,
            ..Self::default()
        }
    }

    pub fn failing(pages: usize, versions: &[u8]) -> Self {
        Self {
            pages,
            fail_versions: versions.iter().copied().collect(),
            calls: Mutex::new(Vec::new()),
        }
    }
}

impl Typesetter for PdfTypesetter {
    fn compile(&self, workdir: &Path, stem: &str) -> Result<TypesetReport> {
        self.calls.lock().unwrap().push(stem.to_string());
        let version: u8 = stem.trim_start_matches("paper_v").parse().unwrap_or(0);
        if self.fail_versions.contains(&version) {
            return Ok(TypesetReport {
                pdf: None,
                log: "! Undefined control sequence.\nl.12 \\badmacro".into(),
            });
        }
        let pdf = workdir.join(format!("{stem}.pdf"));
        std::fs::write(&pdf, pdf_bytes(self.pages.max(1))).map_err(|e| Error::Io {
            path: pdf.clone(),
            source: e,
        })?;
        Ok(TypesetReport { pdf: Some(pdf), log: String::new() })
    }
}

/// Returns one queued hit list per call; `None` entries simulate an outage.
pub struct StubCite {
    pub queue: Mutex<VecDeque<Option<Vec<CiteHit>>>>,
}

impl StubCite {
    pub fn new(per_section: Vec<Option<Vec<CiteHit>>>) -> Self {
        Self {
            queue: Mutex::new(per_section.into()),
        }
    }
}

impl CiteSearchPort for StubCite {
    fn cite(&self, _section_text: &str) -> Result<Vec<CiteHit>> {
        match self.queue.lock().unwrap().pop_front() {
            Some(Some(hits)) => Ok(hits),
            Some(None) => Err(Error::CiteSearchDown("stub outage".into())),
            None => Ok(Vec::new()),
        }
    }
}

/// Well-formed BibTeX for every ID except those listed as malformed.
pub struct StubBib {
    pub malformed: BTreeSet<String>,
    pub fetched: Mutex<BTreeMap<String, usize>>,
}

impl StubBib {
    pub fn new(malformed: &[&str]) -> Self {
        Self {
            malformed: malformed.iter().map(|s| s.to_string()).collect(),
            fetched: Mutex::new(BTreeMap::new()),
        }
    }
}

impl BibFetchPort for StubBib {
    fn bibtex(&self, arxiv_id: &str) -> Result<String> {
        *self.fetched.lock().unwrap().entry(arxiv_id.to_string()).or_default() += 1;
        if self.malformed.contains(arxiv_id) {
            return Ok(format!("@article{{broken{arxiv_id},\n title={{unclosed\n"));
        }
        let key = format!("ref{}", arxiv_id.replace(['.', '/'], "_"));
        Ok(format!("@article{{{key},\n  title={{Paper {arxiv_id}}},\n  eprint={{{arxiv_id}}},\n  year={{2024}}\n}}"))
    }
}

pub fn hit(id: &str, sentence: Option<&str>) -> CiteHit {
    CiteHit {
        arxiv_id: id.to_string(),
        sentence: sentence.map(str::to_string),
    }
}

/// Distinct fake PNG payloads.
pub fn fake_png(seed: usize) -> Vec<u8> {
    let mut v = b"\x89PNG\r\n\x1a\n".to_vec();
    v.extend(format!("plot-{seed}").bytes());
    v
}
