//! Referee stage: render the PDF and ask a multimodal reviewer for a report.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{AgentMessage, Role};
use crate::paper::delimited_block;
use crate::project::{ArtifactRole, PaperVersion, ProjectDir};
use crate::prompts;
use crate::runtime::Conversation;

pub const REVIEWER_AGENT: &str = "reviewer";
pub const DEFAULT_DPI: u32 = 150;
pub const DEFAULT_PAGES_PER_MESSAGE: usize = 8;
pub const MAX_SCORE: u8 = 9;

/// Rasterizes every page of a PDF to PNG.
pub trait PageRenderer: Send + Sync {
    fn render(&self, pdf: &[u8], dpi: u32) -> Result<Vec<Vec<u8>>>;
}

/// Pure-Rust rasterizer.
#[derive(Debug, Default, Clone, Copy)]
pub struct HayroRenderer;

impl PageRenderer for HayroRenderer {
    fn render(&self, pdf: &[u8], dpi: u32) -> Result<Vec<Vec<u8>>> {
        use hayro::hayro_interpret::InterpreterSettings;
        use hayro::hayro_syntax::Pdf;
        use hayro::vello_cpu::color::palette::css::WHITE;

        let doc = Pdf::new(Arc::new(pdf.to_vec())).map_err(|e| Error::CorruptPdf(format!("{e:?}")))?;
        let pages = doc.pages();
        if pages.is_empty() {
            return Err(Error::CorruptPdf("document has no pages".into()));
        }
        let scale = dpi as f32 / 72.0;
        let cache = hayro::RenderCache::new();
        let settings = InterpreterSettings::default();
        let pixmap = hayro::PixmapSettings {
            x_scale: scale,
            y_scale: scale,
            bg_color: WHITE,
        };
        pages
            .iter()
            .map(|page| {
                hayro::render(page, &cache, &settings, &hayro::RenderSettings::default(), &pixmap)
                    .into_png()
                    .map_err(|e| Error::CorruptPdf(e.to_string()))
            })
            .collect()
    }
}

/// Shells out to `pdftoppm`-style tools writing `<prefix>-<n>.png` files.
#[derive(Debug, Clone)]
pub struct CommandRenderer {
    pub program: String,
}

impl Default for CommandRenderer {
    fn default() -> Self {
        Self {
            program: "pdftoppm".into(),
        }
    }
}

impl PageRenderer for CommandRenderer {
    fn render(&self, pdf: &[u8], dpi: u32) -> Result<Vec<Vec<u8>>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("in.pdf");
        std::fs::write(&input, pdf).map_err(|e| Error::io(&input, e))?;
        let out = Command::new(&self.program)
            .arg("-r")
            .arg(dpi.to_string())
            .arg("-png")
            .arg(&input)
            .arg(dir.path().join("page"))
            .output()
            .map_err(|e| Error::Spawn {
                command: self.program.clone(),
                detail: e.to_string(),
            })?;
        if !out.status.success() {
            return Err(Error::CorruptPdf(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.path())
            .map_err(|e| Error::io(dir.path(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        // page-1.png, page-2.png, ..., page-10.png: sort numerically
        files.sort_by_key(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.rsplit('-').next())
                .and_then(|n| n.parse::<usize>().ok())
                .unwrap_or(usize::MAX)
        });
        files.iter().map(|p| std::fs::read(p).map_err(|e| Error::io(p, e))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefereeReport {
    pub review: String,
    pub score: Option<u8>,
    pub page_count: usize,
}

impl RefereeReport {
    pub fn to_markdown(&self) -> String {
        let score = self.score.map(|s| format!("{s}/{MAX_SCORE}")).unwrap_or_else(|| "n/a".into());
        format!("# Referee report\n\nScore: {score}\n\n{}\n", self.review.trim())
    }
}

/// Body of the `\begin{REVIEW}...\end{REVIEW}` block.
pub fn parse_review(text: &str) -> Option<String> {
    delimited_block(text, "REVIEW").filter(|r| !r.is_empty())
}

/// Score in 0..=9 from a review, trying `Score: X`, then `X/9`, then a
/// trailing integer. `Err` carries an out-of-range value.
pub fn extract_score(review: &str) -> std::result::Result<Option<u8>, u64> {
    let patterns = [
        r"(?i)score\W{0,4}\s*(\d+)",
        r"(\d+)\s*/\s*9\b",
        r"(\d+)\W*$",
    ];
    for p in patterns {
        let re = Regex::new(p).expect("static regex");
        if let Some(c) = re.captures_iter(review.trim()).last() {
            let n: u64 = c[1].parse().unwrap_or(u64::MAX);
            return if n <= MAX_SCORE as u64 { Ok(Some(n as u8)) } else { Err(n) };
        }
    }
    Ok(None)
}

#[derive(Clone)]
pub struct ReviewConfig {
    pub renderer: Arc<dyn PageRenderer>,
    pub dpi: u32,
    pub pages_per_message: usize,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            renderer: Arc::new(HayroRenderer),
            dpi: DEFAULT_DPI,
            pages_per_message: DEFAULT_PAGES_PER_MESSAGE,
        }
    }
}

/// Reviews a paper PDF in a single multimodal request (one re-ask when the
/// REVIEW block is missing).
pub fn review_pdf(
    pdf: &[u8],
    input: Option<&str>,
    cfg: &ReviewConfig,
    convo: &mut Conversation<'_>,
) -> Result<RefereeReport> {
    let pages = cfg.renderer.render(pdf, cfg.dpi)?;
    if pages.is_empty() {
        return Err(Error::CorruptPdf("no pages rendered".into()));
    }
    let per = cfg.pages_per_message.max(1);
    let chunks: Vec<&[Vec<u8>]> = pages.chunks(per).collect();
    let mut req = convo.runtime().request(REVIEWER_AGENT).system(prompts::REVIEWER);
    if let Some(text) = input.filter(|t| !t.trim().is_empty()) {
        req = req.user(format!("Context provided by the authors:\n{text}"));
    }
    for (i, chunk) in chunks.iter().enumerate() {
        let caption = if chunks.len() == 1 {
            "The paper pages follow, in order.".to_string()
        } else {
            prompts::review_continuation(i + 1, chunks.len())
        };
        let mut msg = AgentMessage::text("user", Role::User, caption);
        for png in chunk.iter() {
            msg = msg.with_image_png(png);
        }
        req = req.message(msg);
    }
    let reply = convo.ask(&req)?;
    let review = match parse_review(&reply) {
        Some(r) => r,
        None => {
            let retry = req
                .message(AgentMessage::text(REVIEWER_AGENT, Role::Assistant, reply))
                .user(prompts::REVIEW_REASK);
            parse_review(&convo.ask(&retry)?).ok_or(Error::MissingReviewBlock)?
        }
    };
    let score = match extract_score(&review) {
        Ok(s) => s,
        Err(n) => {
            convo.warn(format!("review score {n} is outside 0..={MAX_SCORE}; treating it as absent"));
            None
        }
    };
    if score.is_none() {
        convo.warn("review has no score");
    }
    Ok(RefereeReport {
        review,
        score,
        page_count: pages.len(),
    })
}

/// Highest paper version with a PDF in the project.
pub fn latest_pdf(project: &ProjectDir) -> Option<PaperVersion> {
    PaperVersion::ALL
        .into_iter()
        .rev()
        .find(|v| project.exists(&ArtifactRole::PaperPdf(*v)))
}

/// Reviews `pdf` (or the latest paper PDF) and writes `referee.md`.
pub fn run_review(
    project: &ProjectDir,
    pdf: Option<PathBuf>,
    cfg: &ReviewConfig,
    convo: &mut Conversation<'_>,
) -> Result<RefereeReport> {
    let bytes = match pdf {
        Some(path) => std::fs::read(&path).map_err(|e| Error::io(&path, e))?,
        None => {
            let v = latest_pdf(project).ok_or_else(|| {
                Error::MissingArtifact(vec![ArtifactRole::PaperPdf(PaperVersion::ALL[3])])
            })?;
            project.read_artifact(&ArtifactRole::PaperPdf(v))?
        }
    };
    let input = project.read_text(&ArtifactRole::Input).ok();
    let report = review_pdf(&bytes, input.as_deref(), cfg, convo)?;
    project.write_text(&ArtifactRole::Referee, &report.to_markdown())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_forms() {
        assert_eq!(extract_score("Good paper.\nScore: 7"), Ok(Some(7)));
        assert_eq!(extract_score("**Score**: 3 out of 9"), Ok(Some(3)));
        assert_eq!(extract_score("I rate it 6/9 overall."), Ok(Some(6)));
        assert_eq!(extract_score("Weak evidence. Final: 2"), Ok(Some(2)));
        assert_eq!(extract_score("No number here."), Ok(None));
        assert_eq!(extract_score("Score: 12"), Err(12));
    }

    #[test]
    fn review_block() {
        assert_eq!(parse_review("x \\begin{REVIEW}\nok\n\\end{REVIEW}").as_deref(), Some("ok"));
        assert_eq!(parse_review("no block"), None);
        assert_eq!(parse_review("\\begin{REVIEW}\n\\end{REVIEW}"), None);
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(HayroRenderer.render(b"not a pdf", 72), Err(Error::CorruptPdf(_))));
    }
}
