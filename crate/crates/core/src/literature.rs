//! Literature stage: novelty loop over a scholarly search port.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts;
use crate::runtime::Conversation;

pub const NOVELTY_AGENT: &str = "novelty";
pub const SUMMARY_AGENT: &str = "literature_summary";
pub const DEFAULT_MAX_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyVerdict {
    New,
    NotNew,
    Query(String),
}

impl NoveltyVerdict {
    /// Parses the first meaningful line of a novelty-agent reply.
    pub fn parse(text: &str) -> Option<Self> {
        let line = text
            .lines()
            .map(|l| l.trim().trim_matches(|c| c == '*' || c == '`').trim())
            .find(|l| !l.is_empty())?;
        let (key, value) = line.split_once(':')?;
        let value = value.trim().trim_matches(|c| c == '*' || c == '"').trim();
        match key.trim().to_ascii_uppercase().as_str() {
            "DECISION" => match value.to_ascii_uppercase().replace('_', " ").as_str() {
                "NEW" => Some(Self::New),
                "NOT NEW" => Some(Self::NotNew),
                _ => None,
            },
            "QUERY" if !value.is_empty() => Some(Self::Query(value.to_string())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoundPaper {
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub url: String,
    pub source_query: String,
}

pub trait SearchPort: Send + Sync {
    /// Failures surface as `Error::SearchPortDown`.
    fn search(&self, query: &str) -> Result<Vec<FoundPaper>>;
}

/// Checks the query before delegating to the port.
pub fn search_port_query(port: &dyn SearchPort, query: &str) -> Result<Vec<FoundPaper>> {
    if query.trim().is_empty() {
        return Err(Error::Precondition("search query is empty".into()));
    }
    port.search(query.trim())
}

/// Semantic Scholar's public paper-search endpoint.
#[derive(Debug, Clone)]
pub struct SemanticScholar {
    client: crate::net::LazyClient,
    pub base_url: String,
    pub limit: usize,
    pub api_key: Option<String>,
    /// Retries after a 429, honouring `Retry-After` up to 30 s.
    pub rate_limit_retries: u32,
}

impl SemanticScholar {
    pub fn new() -> Result<Self> {
        Ok(Self {
            client: crate::net::LazyClient::new(Duration::from_secs(60)),
            base_url: std::env::var("SEMANTIC_SCHOLAR_BASE_URL")
                .unwrap_or_else(|_| "https://api.semanticscholar.org".into()),
            limit: 10,
            api_key: std::env::var("SEMANTIC_SCHOLAR_API_KEY").ok(),
            rate_limit_retries: 2,
        })
    }
}

#[derive(Deserialize)]
struct S2Page {
    #[serde(default)]
    data: Vec<S2Paper>,
}

#[derive(Deserialize)]
struct S2Paper {
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    url: Option<String>,
}

impl SearchPort for SemanticScholar {
    fn search(&self, query: &str) -> Result<Vec<FoundPaper>> {
        let down = |d: String| Error::SearchPortDown(d);
        let mut attempt = 0;
        loop {
            let mut req = self
                .client
                .get()
                .map_err(down)?
                .get(format!("{}/graph/v1/paper/search", self.base_url.trim_end_matches('/')))
                .query(&[
                    ("query", query),
                    ("limit", &self.limit.to_string()),
                    ("fields", "title,abstract,url"),
                ]);
            if let Some(k) = &self.api_key {
                req = req.header("x-api-key", k);
            }
            let resp = req.send().map_err(|e| down(e.to_string()))?;
            let status = resp.status();
            if status.as_u16() == 429 && attempt < self.rate_limit_retries {
                let wait = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.parse::<u64>().ok())
                    .unwrap_or(1)
                    .min(30);
                std::thread::sleep(Duration::from_secs(wait));
                attempt += 1;
                continue;
            }
            if !status.is_success() {
                return Err(down(format!("HTTP {status}")));
            }
            let page: S2Page = resp.json().map_err(|e| down(e.to_string()))?;
            return Ok(page
                .data
                .into_iter()
                .filter_map(|p| {
                    Some(FoundPaper {
                        title: p.title?,
                        abstract_text: p.abstract_text.unwrap_or_default(),
                        url: p.url.unwrap_or_default(),
                        source_query: query.to_string(),
                    })
                })
                .collect());
        }
    }
}

/// Placeholder for an external deep-search backend; always reports itself down.
#[derive(Debug, Clone, Copy, Default)]
pub struct OwlStub;

impl SearchPort for OwlStub {
    fn search(&self, _query: &str) -> Result<Vec<FoundPaper>> {
        Err(Error::SearchPortDown("Owl backend is not configured".into()))
    }
}

/// Canned results keyed by query; unknown queries return `default`.
#[derive(Debug, Clone, Default)]
pub struct FixedSearch {
    pub results: BTreeMap<String, Vec<(String, String, String)>>,
    pub default: Vec<(String, String, String)>,
}

impl SearchPort for FixedSearch {
    fn search(&self, query: &str) -> Result<Vec<FoundPaper>> {
        let rows = self.results.get(query).unwrap_or(&self.default);
        Ok(rows
            .iter()
            .map(|(t, a, u)| FoundPaper {
                title: t.clone(),
                abstract_text: a.clone(),
                url: u.clone(),
                source_query: query.to_string(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureOutcome {
    /// `New` or `NotNew`.
    pub verdict: NoveltyVerdict,
    /// True when the iteration cap decided the verdict.
    pub forced: bool,
    pub iterations: usize,
    pub queries: Vec<String>,
    pub search_calls: usize,
    pub search_failures: usize,
    pub papers: Vec<FoundPaper>,
    pub report: String,
}

fn render_papers(papers: &[FoundPaper]) -> String {
    if papers.is_empty() {
        return "(none)".into();
    }
    papers
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {}\n   {}\n   {}\n", i + 1, p.title, p.url, p.abstract_text))
        .collect()
}

fn ask_verdict(convo: &mut Conversation<'_>, user: String) -> Result<NoveltyVerdict> {
    let base = convo
        .runtime()
        .request(NOVELTY_AGENT)
        .system(prompts::NOVELTY)
        .user(user);
    let reply = convo.ask(&base)?;
    if let Some(v) = NoveltyVerdict::parse(&reply) {
        return Ok(v);
    }
    let retry = base
        .message(crate::llm::AgentMessage::text(
            NOVELTY_AGENT,
            crate::llm::Role::Assistant,
            reply,
        ))
        .user(prompts::NOVELTY_REASK);
    let reply = convo.ask(&retry)?;
    NoveltyVerdict::parse(&reply).ok_or(Error::Unparseable {
        what: "novelty verdict",
        detail: reply.lines().next().unwrap_or_default().to_string(),
    })
}

/// Runs the novelty loop and writes the summary report.
///
/// A search-port outage costs an iteration and a warning but never decides
/// the verdict; only the cap does that.
pub fn check_novelty(
    input: &str,
    idea: &str,
    search: &dyn SearchPort,
    convo: &mut Conversation<'_>,
    max_iters: usize,
) -> Result<LiteratureOutcome> {
    if max_iters == 0 {
        return Err(Error::Precondition("max_iters must be at least 1".into()));
    }
    let mut papers: Vec<FoundPaper> = Vec::new();
    let mut queries: Vec<String> = Vec::new();
    let mut log = String::new();
    let mut search_calls = 0;
    let mut search_failures = 0;
    let mut verdict = None;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let user = prompts::novelty_user(input, idea, &render_papers(&papers), &queries);
        match ask_verdict(convo, user)? {
            NoveltyVerdict::Query(q) => {
                search_calls += 1;
                queries.push(q.clone());
                match search_port_query(search, &q) {
                    Ok(found) => {
                        log.push_str(&format!("- query `{q}`: {} results\n", found.len()));
                        for p in found {
                            if !papers.iter().any(|x| x.title == p.title && x.url == p.url) {
                                papers.push(p);
                            }
                        }
                    }
                    Err(Error::SearchPortDown(d)) => {
                        search_failures += 1;
                        log.push_str(&format!("- query `{q}`: search unavailable\n"));
                        convo.warn(format!("search port down for query '{q}': {d}"));
                    }
                    Err(e) => return Err(e),
                }
            }
            v => {
                verdict = Some(v);
                break;
            }
        }
    }
    let forced = verdict.is_none();
    let verdict = verdict.unwrap_or(NoveltyVerdict::New);
    let verdict_text = match (&verdict, forced) {
        (NoveltyVerdict::NotNew, _) => "not new".to_string(),
        (_, true) => format!("new (no relevant prior work found after {max_iters} iterations)"),
        _ => "new".to_string(),
    };
    let summary = convo.ask(
        &convo
            .runtime()
            .request(SUMMARY_AGENT)
            .system(prompts::LITERATURE_SUMMARY)
            .user(prompts::literature_summary_user(
                idea,
                &verdict_text,
                &render_papers(&papers),
                &log,
            )),
    )?;
    let report = format!(
        "# Literature report\n\n**Verdict:** idea is {verdict_text}.\n\n{}\n",
        summary.trim()
    );
    Ok(LiteratureOutcome {
        verdict,
        forced,
        iterations,
        queries,
        search_calls,
        search_failures,
        papers,
        report,
    })
}
