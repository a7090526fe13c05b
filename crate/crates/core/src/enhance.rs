//! Input-text enhancement: summaries of referenced arXiv papers are appended
//! to the input text.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::Duration;

use regex::Regex;

use crate::error::{Error, Result};
use crate::llm::Role;
use crate::prompts;
use crate::runtime::Conversation;

pub trait PdfFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>>;
}

pub trait OcrPort: Send + Sync {
    /// Converts a PDF into markdown.
    fn to_markdown(&self, pdf: &[u8]) -> Result<String>;
}

/// Downloads PDFs from arxiv.org.
#[derive(Debug, Clone)]
pub struct ArxivFetcher {
    client: crate::net::LazyClient,
}

impl ArxivFetcher {
    pub fn new() -> Result<Self> {
        Ok(Self {
            client: crate::net::LazyClient::new(Duration::from_secs(120)),
        })
    }
}

impl PdfFetcher for ArxivFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>> {
        let fail = |detail: String| Error::FetchFailed {
            url: url.to_string(),
            detail,
        };
        let id = arxiv_id(url).ok_or_else(|| fail("not an arXiv URL".into()))?;
        let resp = self
            .client
            .get()
            .map_err(&fail)?
            .get(format!("https://arxiv.org/pdf/{id}"))
            .send()
            .map_err(|e| fail(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(fail(format!("HTTP {}", resp.status())));
        }
        let bytes = resp.bytes().map_err(|e| fail(e.to_string()))?;
        Ok(bytes.to_vec())
    }
}

/// OCR through an external command reading the PDF on stdin and printing
/// markdown (or plain text) on stdout, e.g. `pdftotext - -`.
#[derive(Debug, Clone)]
pub struct CommandOcr {
    pub argv: Vec<String>,
}

impl OcrPort for CommandOcr {
    fn to_markdown(&self, pdf: &[u8]) -> Result<String> {
        let (prog, args) = self
            .argv
            .split_first()
            .ok_or_else(|| Error::Precondition("OCR command is empty".into()))?;
        let spawn_err = |e: std::io::Error| Error::Spawn {
            command: self.argv.join(" "),
            detail: e.to_string(),
        };
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(spawn_err)?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin.write_all(pdf).map_err(spawn_err)?;
        }
        let out = child.wait_with_output().map_err(spawn_err)?;
        if !out.status.success() {
            return Err(Error::Spawn {
                command: self.argv.join(" "),
                detail: String::from_utf8_lossy(&out.stderr).into_owned(),
            });
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }
}

fn url_regex() -> Regex {
    Regex::new(
        r"https?://(?:www\.)?arxiv\.org/(?:abs|pdf)/((?:\d{4}\.\d{4,5}|[a-z\-]+(?:\.[A-Z]{2})?/\d{7})(?:v\d+)?)(?:\.pdf)?",
    )
    .expect("static regex")
}

/// arXiv URLs in order of first appearance, without duplicates.
pub fn find_arxiv_urls(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for m in url_regex().find_iter(text) {
        let url = m.as_str().to_string();
        if !seen.contains(&url) {
            seen.push(url);
        }
    }
    seen
}

pub fn arxiv_id(url: &str) -> Option<String> {
    url_regex().captures(url).map(|c| c[1].to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub text: String,
    pub summarized: Vec<String>,
    pub warnings: Vec<String>,
}

/// Appends one summary block per reachable arXiv URL, in URL order.
///
/// The original text is kept verbatim as a prefix. URLs that cannot be
/// fetched or converted are skipped with a warning.
pub fn enhance_input(
    input: &str,
    fetcher: &dyn PdfFetcher,
    ocr: &dyn OcrPort,
    convo: &mut Conversation<'_>,
) -> Result<Enhanced> {
    let mut text = input.to_string();
    let mut summarized = Vec::new();
    let mut warnings = Vec::new();
    for url in find_arxiv_urls(input) {
        let id = arxiv_id(&url).unwrap_or_else(|| url.clone());
        let markdown = match fetcher.fetch(&url).and_then(|pdf| ocr.to_markdown(&pdf)) {
            Ok(md) => md,
            Err(e) => {
                let w = format!("skipping {url}: {e}");
                convo.warn(w.clone());
                warnings.push(w);
                continue;
            }
        };
        if let Some(p) = convo.project() {
            let name = id.replace('/', "_");
            p.write_aux(&format!("enhance/{name}.md"), markdown.as_bytes())?;
        }
        let req = convo
            .runtime()
            .request("summarizer")
            .system(prompts::SUMMARIZER)
            .message(crate::llm::AgentMessage::text("user", Role::User, markdown));
        let summary = convo.ask(&req)?;
        text.push_str(&summary_block(&id, &summary));
        summarized.push(url);
    }
    Ok(Enhanced {
        text,
        summarized,
        warnings,
    })
}

pub fn summary_block(id: &str, summary: &str) -> String {
    format!("\n\n## Summary of arXiv:{id}\n\n{}\n", summary.trim())
}
