//! Paper stage: four checkpoint drafts from the research artifacts.

mod citations;
mod compile;
mod figures;
mod latex;

use std::collections::BTreeSet;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use citations::{
    add_citations, is_arxiv_id, parse_cite_lines, place_marker, validate_bibtex, ArxivBibFetcher, BibFetchPort,
    ChatCiteSearch, CitationReport, CiteHit, CiteSearchPort,
};
pub use compile::{compile_checkpoint, Checkpoint, CommandTypesetter, TypesetReport, Typesetter, BUILD_DIR, FIXER_AGENT};
pub use figures::{
    audit, batches, insert_figures, preprocess, write_captions, Insertion, PaperInputs, PlotFile, Preprocessed,
    CAPTION_AGENT, DEFAULT_BATCH, WRITER_AGENT,
};
pub use latex::{clean_section, delimited_block, figure_label, BibEntry, Figure, Journal, PaperDraft, SectionName};

use crate::error::{Error, Result};
use crate::keywords::{select_keywords, KeywordSelection, Vocabulary, VocabularyKind};
use crate::llm::{AgentMessage, Role};
use crate::project::{PaperVersion, ProjectDir};
use crate::prompts;
use crate::runtime::Conversation;

pub const DEFAULT_KEYWORDS: usize = 5;

#[derive(Clone)]
pub struct PaperConfig {
    pub journal: Journal,
    pub citations: bool,
    /// Sections that get a self-reflection rewrite after drafting.
    pub reflect: BTreeSet<SectionName>,
    pub batch_size: usize,
    pub n_keywords: usize,
    pub vocabulary: VocabularyKind,
    pub typesetter: Arc<dyn Typesetter>,
    pub cite_search: Option<Arc<dyn CiteSearchPort>>,
    pub bib_fetch: Option<Arc<dyn BibFetchPort>>,
}

impl Default for PaperConfig {
    fn default() -> Self {
        Self {
            journal: Journal::Aps,
            citations: true,
            reflect: BTreeSet::from([SectionName::Results]),
            batch_size: DEFAULT_BATCH,
            n_keywords: DEFAULT_KEYWORDS,
            vocabulary: VocabularyKind::UnescoHierarchical,
            typesetter: Arc::new(CommandTypesetter::default()),
            cite_search: None,
            bib_fetch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperOutcome {
    pub draft: PaperDraft,
    pub checkpoints: Vec<Checkpoint>,
    pub keywords: Option<KeywordSelection>,
    pub insertion: Insertion,
    pub citations: Option<CitationReport>,
    pub duplicate_plots: Vec<String>,
    pub rejected_polish: Vec<String>,
}

/// Sorted `\cite` keys in `text`.
pub fn cite_keys(text: &str) -> Vec<String> {
    let re = Regex::new(r"\\cite[pt]?\{([^}]*)\}").expect("static regex");
    let mut keys: Vec<String> = re
        .captures_iter(text)
        .flat_map(|c| c[1].split(',').map(|k| k.trim().to_string()).collect::<Vec<_>>())
        .collect();
    keys.sort();
    keys
}

/// Whether `after` keeps every figure and citation of `before`.
pub fn preserves(before: &str, after: &str, figures: &[Figure]) -> bool {
    figures.iter().all(|f| f.count_in(before) == f.count_in(after)) && cite_keys(before) == cite_keys(after)
}

fn writer_request(convo: &Conversation<'_>, prompt: String) -> crate::llm::ChatRequest {
    convo
        .runtime()
        .request(WRITER_AGENT)
        .system(prompts::PAPER_WRITER)
        .user(prompt)
}

fn title_and_abstract(context: &str, convo: &mut Conversation<'_>) -> Result<(String, String)> {
    let req = writer_request(convo, prompts::title_abstract(context));
    let reply = convo.ask(&req)?;
    let parse = |r: &str| Some((delimited_block(r, "Title")?, delimited_block(r, "Abstract")?));
    if let Some(found) = parse(&reply).filter(|(t, a)| !t.is_empty() && !a.is_empty()) {
        return Ok(found);
    }
    let retry = req
        .message(AgentMessage::text(WRITER_AGENT, Role::Assistant, reply))
        .user("Respond again using exactly the \\begin{Title}...\\end{Title} and \\begin{Abstract}...\\end{Abstract} blocks.");
    let reply = convo.ask(&retry)?;
    parse(&reply)
        .filter(|(t, a)| !t.is_empty() && !a.is_empty())
        .ok_or(Error::Unparseable {
            what: "title/abstract",
            detail: "no Title/Abstract blocks after one re-ask".into(),
        })
}

fn write_section(
    draft: &PaperDraft,
    context: &str,
    name: SectionName,
    reflect: bool,
    convo: &mut Conversation<'_>,
) -> Result<String> {
    let previous: Vec<(String, String)> = draft
        .sections
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let prompt = prompts::section(context, &draft.title, &draft.abstract_text, &previous, name.as_str());
    let mut text = clean_section(&convo.ask(&writer_request(convo, prompt))?);
    if reflect && !text.is_empty() {
        let revised = clean_section(&convo.ask(&writer_request(convo, prompts::reflection(name.as_str(), &text)))?);
        if revised.is_empty() {
            convo.warn(format!("reflection on {name} came back empty; keeping the draft"));
        } else {
            text = revised;
        }
    }
    if text.is_empty() {
        return Err(Error::EmptySection(name.to_string()));
    }
    Ok(text)
}

/// Asks for a rewrite of one section and keeps it only if it preserves every
/// figure and citation.
fn polish(
    draft: &mut PaperDraft,
    name: SectionName,
    prompt: String,
    rejected: &mut Vec<String>,
    convo: &mut Conversation<'_>,
) -> Result<()> {
    let before = draft.section(name).unwrap_or_default().to_string();
    let after = clean_section(&convo.ask(&writer_request(convo, prompt))?);
    if after.is_empty() || !preserves(&before, &after, &draft.figures) {
        convo.warn(format!(
            "polished {name} lost figures or citations; keeping the previous text"
        ));
        rejected.push(format!("v{}:{name}", draft.version.get()));
    } else {
        draft.set_section(name, after);
    }
    Ok(())
}

fn checkpoint(
    project: &ProjectDir,
    draft: &PaperDraft,
    cfg: &PaperConfig,
    out: &mut Vec<Checkpoint>,
    convo: &mut Conversation<'_>,
) -> Result<()> {
    convo.runtime().cancel.check()?;
    let cp = compile_checkpoint(project, draft, cfg.typesetter.as_ref(), convo)?;
    convo.snapshot(
        &format!("paper_v{}", draft.version.get()),
        &serde_json::json!({ "draft": draft, "checkpoint": cp }),
    )?;
    out.push(cp);
    Ok(())
}

fn bump(draft: &mut PaperDraft) {
    draft.version = draft.version.next().expect("at most four versions");
}

/// Writes `paper_v1..4.tex` (and PDFs when the typesetter succeeds).
///
/// v1 is the first full draft with figures, v2 polishes Results, v3 adds
/// citations (or equals v2 when citations are off), v4 is a final pass.
pub fn run_paper(project: &ProjectDir, cfg: &PaperConfig, convo: &mut Conversation<'_>) -> Result<PaperOutcome> {
    let pre = preprocess(project, convo)?;
    let PaperInputs {
        input,
        idea,
        methods,
        results,
    } = &pre.inputs;

    let keywords = match Vocabulary::builtin(cfg.vocabulary)
        .and_then(|v| select_keywords(&format!("{idea}\n\n{methods}"), &v, cfg.n_keywords, convo))
    {
        Ok(sel) => Some(sel),
        Err(e) => {
            convo.warn(format!("keyword selection failed: {e}; continuing without keywords"));
            None
        }
    };
    let kw: Vec<String> = keywords.as_ref().map(|k| k.keywords.clone()).unwrap_or_default();
    let context = prompts::paper_context(input, idea, methods, results, &kw);

    let (title, abstract_text) = title_and_abstract(&context, convo)?;
    let mut draft = PaperDraft {
        title,
        abstract_text,
        keywords: kw,
        sections: Vec::new(),
        figures: Vec::new(),
        bib: Vec::new(),
        version: PaperVersion::new(1)?,
        journal: cfg.journal,
    };
    for name in SectionName::ALL {
        convo.runtime().cancel.check()?;
        let text = write_section(&draft, &context, name, cfg.reflect.contains(&name), convo)?;
        draft.set_section(name, text);
    }

    let figures = write_captions(project, &pre.plots, &context, cfg.batch_size, convo)?;
    let results_text = draft.section(SectionName::Results).unwrap_or_default().to_string();
    let insertion = insert_figures(&results_text, &figures, cfg.batch_size, convo)?;
    draft.set_section(SectionName::Results, insertion.results.clone());
    draft.figures = figures;

    let mut checkpoints = Vec::new();
    let mut rejected = Vec::new();
    checkpoint(project, &draft, cfg, &mut checkpoints, convo)?;

    bump(&mut draft);
    let current = draft.section(SectionName::Results).unwrap_or_default().to_string();
    polish(&mut draft, SectionName::Results, prompts::polish_results(&current), &mut rejected, convo)?;
    checkpoint(project, &draft, cfg, &mut checkpoints, convo)?;

    bump(&mut draft);
    let citations = match (&cfg.cite_search, &cfg.bib_fetch) {
        (Some(cite), Some(bib)) if cfg.citations => {
            Some(add_citations(&mut draft, cite.as_ref(), bib.as_ref(), convo)?)
        }
        (_, _) if cfg.citations => {
            convo.warn("citations requested but no citation ports configured; v3 equals v2");
            None
        }
        _ => None,
    };
    checkpoint(project, &draft, cfg, &mut checkpoints, convo)?;

    bump(&mut draft);
    for name in SectionName::ALL {
        convo.runtime().cancel.check()?;
        let body = draft.section(name).unwrap_or_default().to_string();
        polish(&mut draft, name, prompts::final_polish(name.as_str(), &body), &mut rejected, convo)?;
    }
    checkpoint(project, &draft, cfg, &mut checkpoints, convo)?;

    Ok(PaperOutcome {
        draft,
        checkpoints,
        keywords,
        insertion,
        citations,
        duplicate_plots: pre.duplicates,
        rejected_polish: rejected,
    })
}
