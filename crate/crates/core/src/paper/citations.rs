//! Citation search and arXiv BibTeX resolution.

use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::latex::{BibEntry, PaperDraft, SectionName};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway, ModelId};
use crate::runtime::Conversation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiteHit {
    pub arxiv_id: String,
    /// Sentence of the section the citation supports, if known.
    pub sentence: Option<String>,
}

pub trait CiteSearchPort: Send + Sync {
    /// Section text in, arXiv identifiers out. Failures are `CiteSearchDown`.
    fn cite(&self, section_text: &str) -> Result<Vec<CiteHit>>;
}

pub trait BibFetchPort: Send + Sync {
    /// BibTeX for one arXiv identifier.
    fn bibtex(&self, arxiv_id: &str) -> Result<String>;
}

pub fn arxiv_id_regex() -> Regex {
    Regex::new(r"^(?:\d{4}\.\d{4,5}|[a-z\-]+(?:\.[A-Z]{2})?/\d{7})(?:v\d+)?$").expect("static regex")
}

pub fn is_arxiv_id(id: &str) -> bool {
    arxiv_id_regex().is_match(id)
}

/// Fetches BibTeX from arXiv's public `/bibtex/<id>` export.
#[derive(Debug, Clone)]
pub struct ArxivBibFetcher {
    client: crate::net::LazyClient,
    pub base_url: String,
}

impl ArxivBibFetcher {
    pub fn new() -> Result<Self> {
        Ok(Self {
            client: crate::net::LazyClient::new(Duration::from_secs(60)),
            base_url: std::env::var("ARXIV_BASE_URL").unwrap_or_else(|_| "https://arxiv.org".into()),
        })
    }
}

impl BibFetchPort for ArxivBibFetcher {
    fn bibtex(&self, arxiv_id: &str) -> Result<String> {
        let url = format!("{}/bibtex/{arxiv_id}", self.base_url.trim_end_matches('/'));
        let fail = |detail: String| Error::FetchFailed {
            url: url.clone(),
            detail,
        };
        let resp = self.client.get().map_err(&fail)?.get(&url).send().map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("HTTP {}", resp.status())));
        }
        resp.text().map_err(|e| fail(e.to_string()))
    }
}

/// Citation search through a chat model (e.g. a search-augmented one).
///
/// The model is asked for lines of the form `<sentence> ||| <arXiv id>`.
pub struct ChatCiteSearch {
    pub gateway: std::sync::Arc<Gateway>,
    pub model: ModelId,
}

const CITE_PROMPT: &str = "For the scientific text below, find published papers on arXiv that support its claims. \
For each citation, output one line: the exact sentence from the text, then ` ||| `, then the arXiv identifier \
(e.g. 2101.01234). Output nothing else.";

impl CiteSearchPort for ChatCiteSearch {
    fn cite(&self, section_text: &str) -> Result<Vec<CiteHit>> {
        let req = ChatRequest::new(self.model.clone(), "citation_search")
            .system(CITE_PROMPT)
            .user(section_text);
        let resp = self
            .gateway
            .complete(&req)
            .map_err(|e| Error::CiteSearchDown(e.to_string()))?;
        Ok(parse_cite_lines(&resp.text))
    }
}

pub fn parse_cite_lines(text: &str) -> Vec<CiteHit> {
    let id_re = Regex::new(r"(\d{4}\.\d{4,5}(?:v\d+)?|[a-z\-]+(?:\.[A-Z]{2})?/\d{7}(?:v\d+)?)")
        .expect("static regex");
    text.lines()
        .filter_map(|line| {
            let (sentence, tail) = match line.split_once("|||") {
                Some((s, t)) => (Some(s.trim().to_string()).filter(|s| !s.is_empty()), t),
                None => (None, line),
            };
            let id = id_re.captures(tail)?[1].to_string();
            Some(CiteHit { arxiv_id: id, sentence })
        })
        .collect()
}

/// Returns the cite key of a single well-formed BibTeX entry.
pub fn validate_bibtex(entry: &str) -> Option<String> {
    let head = Regex::new(r"^\s*@([A-Za-z]+)\s*\{\s*([^,\s{}]+)\s*,").expect("static regex");
    let caps = head.captures(entry)?;
    let mut depth = 0i32;
    let mut closed_at = None;
    for (i, c) in entry.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
                if depth == 0 {
                    closed_at = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let end = closed_at?;
    if !entry[end + 1..].trim().is_empty() || !entry.contains('=') {
        return None;
    }
    Some(caps[2].to_string())
}

/// Appends `\cite{key}` at the end of `sentence` in `text` (before its final
/// punctuation); falls back to the end of the text.
pub fn place_marker(text: &str, sentence: Option<&str>, key: &str) -> String {
    let marker = format!("~\\cite{{{key}}}");
    if let Some(s) = sentence.map(str::trim).filter(|s| !s.is_empty()) {
        if let Some(pos) = text.find(s) {
            let end = pos + s.len();
            let body = &text[..end];
            let cut = if body.ends_with(['.', '!', '?']) { end - 1 } else { end };
            return format!("{}{}{}", &text[..cut], marker, &text[cut..]);
        }
    }
    let trimmed = text.trim_end();
    let cut = if trimmed.ends_with(['.', '!', '?']) { trimmed.len() - 1 } else { trimmed.len() };
    format!("{}{}{}", &text[..cut], marker, &text[cut..])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationReport {
    pub returned_ids: usize,
    pub entries: usize,
    pub dropped: Vec<String>,
    pub markers: usize,
    pub skipped_sections: Vec<String>,
}

/// Runs every section through the cite port and resolves the IDs to BibTeX.
pub fn add_citations(
    draft: &mut PaperDraft,
    cite: &dyn CiteSearchPort,
    bib: &dyn BibFetchPort,
    convo: &mut Conversation<'_>,
) -> Result<CitationReport> {
    let mut report = CitationReport::default();
    let names: Vec<SectionName> = draft.sections.iter().map(|(n, _)| *n).collect();
    for name in names {
        let text = draft.section(name).unwrap_or_default().to_string();
        let hits = match cite.cite(&text) {
            Ok(h) => h,
            Err(e) => {
                convo.warn(format!("citation search failed for {name}: {e}"));
                report.skipped_sections.push(name.to_string());
                continue;
            }
        };
        let mut updated = text;
        for hit in hits {
            report.returned_ids += 1;
            let id = hit.arxiv_id.trim().trim_start_matches("arXiv:").to_string();
            let key = match draft.bib.iter().find(|b| b.arxiv_id == id) {
                Some(existing) => existing.key.clone(),
                None if report.dropped.contains(&id) => continue,
                None => {
                    let fetched = if is_arxiv_id(&id) {
                        bib.bibtex(&id)
                    } else {
                        Err(Error::BadBibtex(id.clone()))
                    };
                    match fetched.ok().and_then(|t| validate_bibtex(&t).map(|k| (k, t))) {
                        Some((key, bibtex)) if !draft.bib.iter().any(|b| b.key == key) => {
                            draft.bib.push(BibEntry {
                                arxiv_id: id.clone(),
                                key: key.clone(),
                                bibtex: bibtex.trim().to_string(),
                                cited_in: name,
                            });
                            key
                        }
                        _ => {
                            convo.warn(format!("{}", Error::BadBibtex(id.clone())));
                            report.dropped.push(id);
                            continue;
                        }
                    }
                }
            };
            updated = place_marker(&updated, hit.sentence.as_deref(), &key);
            report.markers += 1;
        }
        draft.set_section(name, updated);
    }
    report.entries = draft.bib.len();
    Ok(report)
}
