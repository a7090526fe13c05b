//! Plot preprocessing, captions and figure insertion.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::latex::{clean_section, figure_label, Figure};
use crate::error::{Error, Result};
use crate::llm::{AgentMessage, Role};
use crate::project::{ArtifactRole, ProjectDir};
use crate::prompts;
use crate::runtime::Conversation;

pub const CAPTION_AGENT: &str = "caption_writer";
pub const WRITER_AGENT: &str = "paper_writer";
pub const DEFAULT_BATCH: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperInputs {
    pub input: String,
    pub idea: String,
    pub methods: String,
    pub results: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessed {
    pub inputs: PaperInputs,
    /// Unique plots, in listing order; the first file of each duplicate group wins.
    pub plots: Vec<PlotFile>,
    pub duplicates: Vec<String>,
}

/// Reads the four inputs and deduplicates plots by content hash.
pub fn preprocess(project: &ProjectDir, convo: &mut Conversation<'_>) -> Result<Preprocessed> {
    let required = [
        ArtifactRole::Input,
        ArtifactRole::Idea,
        ArtifactRole::Methods,
        ArtifactRole::Results,
    ];
    let missing: Vec<ArtifactRole> = required.iter().filter(|r| !project.exists(r)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(missing));
    }
    let inputs = PaperInputs {
        input: project.read_text(&ArtifactRole::Input)?,
        idea: project.read_text(&ArtifactRole::Idea)?,
        methods: project.read_text(&ArtifactRole::Methods)?,
        results: project.read_text(&ArtifactRole::Results)?,
    };
    let mut plots: Vec<PlotFile> = Vec::new();
    let mut duplicates = Vec::new();
    for name in project.list_plots()? {
        let bytes = project.read_artifact(&ArtifactRole::Plot(name.clone()))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        if plots.iter().any(|p| p.sha256 == sha256) {
            duplicates.push(name);
        } else {
            plots.push(PlotFile { name, sha256 });
        }
    }
    if plots.is_empty() {
        convo.warn("no plots found; the paper will have no figures");
    }
    if !duplicates.is_empty() {
        convo.warn(format!("ignoring duplicate plots: {}", duplicates.join(", ")));
    }
    project.write_aux("paper_build/.keep", b"")?;
    Ok(Preprocessed {
        inputs,
        plots,
        duplicates,
    })
}

/// Consecutive index ranges of at most `size` elements.
pub fn batches(n: usize, size: usize) -> Vec<Range<usize>> {
    let size = size.max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

fn media_type(file: &str) -> &'static str {
    match file.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("svg") => "image/svg+xml",
        Some("pdf") => "application/pdf",
        _ => "image/png",
    }
}

/// One multimodal caption request per plot, with the input texts as context.
pub fn write_captions(
    project: &ProjectDir,
    plots: &[PlotFile],
    context: &str,
    batch_size: usize,
    convo: &mut Conversation<'_>,
) -> Result<Vec<Figure>> {
    let mut figures: Vec<Figure> = Vec::new();
    for (i, plot) in plots.iter().enumerate() {
        let bytes = project.read_artifact(&ArtifactRole::Plot(plot.name.clone()))?;
        let msg = AgentMessage::text("user", Role::User, prompts::caption(context, &plot.name))
            .with_image(media_type(&plot.name), &bytes);
        let req = convo
            .runtime()
            .request(CAPTION_AGENT)
            .system(prompts::PAPER_WRITER)
            .message(msg);
        let mut caption = clean_section(&convo.ask(&req)?);
        if caption.is_empty() {
            convo.warn(format!("empty caption for {}; using a placeholder", plot.name));
            caption = format!("Plot {}.", plot.name.replace('_', "\\_"));
        }
        let mut label = figure_label(&plot.name);
        while figures.iter().any(|f| f.label == label) {
            label.push('x');
        }
        figures.push(Figure {
            file: plot.name.clone(),
            caption,
            label,
            batch_index: i / batch_size.max(1),
        });
    }
    Ok(figures)
}

/// Figures of `expected` missing from `text`, and those present more than once.
pub fn audit(text: &str, expected: &[Figure]) -> (Vec<String>, Vec<String>) {
    let mut missing = Vec::new();
    let mut repeated = Vec::new();
    for f in expected {
        match f.count_in(text) {
            0 => missing.push(f.label.clone()),
            1 => {}
            _ => repeated.push(f.label.clone()),
        }
    }
    (missing, repeated)
}

/// Removes every figure environment after the first that shows `fig`.
fn drop_repeats(text: &str, fig: &Figure) -> String {
    let mut out = String::new();
    let mut rest = text;
    let mut seen = false;
    while let Some(start) = rest.find("\\begin{figure") {
        let Some(end_rel) = rest[start..].find("\\end{figure") else {
            break;
        };
        let close = rest[start + end_rel..]
            .find('}')
            .map(|c| start + end_rel + c + 1)
            .unwrap_or(rest.len());
        // \end{figure*} closes after the star
        let close = if rest[close..].starts_with('}') { close + 1 } else { close };
        let env = &rest[start..close];
        out.push_str(&rest[..start]);
        if fig.count_in(env) > 0 {
            if !seen {
                out.push_str(env);
            }
            seen = true;
        } else {
            out.push_str(env);
        }
        rest = &rest[close..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertion {
    pub results: String,
    pub batch_sizes: Vec<usize>,
    pub reasks: usize,
}

/// Inserts figures into the Results section in batches.
///
/// After each batch every figure inserted so far must appear exactly once;
/// a batch with missing figures is re-asked once, then `FigureDropped`.
/// Repeated environments are pruned to their first occurrence.
pub fn insert_figures(
    results: &str,
    figures: &[Figure],
    batch_size: usize,
    convo: &mut Conversation<'_>,
) -> Result<Insertion> {
    let mut text = results.to_string();
    let mut batch_sizes = Vec::new();
    let mut reasks = 0;
    for range in batches(figures.len(), batch_size) {
        batch_sizes.push(range.len());
        let batch = &figures[range.clone()];
        let so_far = &figures[..range.end];
        let listing: String = batch
            .iter()
            .map(|f| format!("{}\n\n", f.environment()))
            .collect();
        let req = convo
            .runtime()
            .request(WRITER_AGENT)
            .system(prompts::PAPER_WRITER)
            .user(prompts::insert_figures(&text, &listing));
        let reply = convo.ask(&req)?;
        let mut candidate = clean_section(&reply);
        let (missing, _) = audit(&candidate, so_far);
        if !missing.is_empty() {
            reasks += 1;
            let retry = req
                .message(AgentMessage::text(WRITER_AGENT, Role::Assistant, reply))
                .user(prompts::missing_figures(&missing));
            candidate = clean_section(&convo.ask(&retry)?);
            let (missing, _) = audit(&candidate, so_far);
            if let Some(label) = missing.into_iter().next() {
                return Err(Error::FigureDropped(label));
            }
        }
        let (_, repeated) = audit(&candidate, so_far);
        for label in repeated {
            let fig = so_far.iter().find(|f| f.label == label).expect("audited");
            convo.warn(format!("figure {label} was inserted more than once; keeping the first"));
            candidate = drop_repeats(&candidate, fig);
        }
        text = candidate;
    }
    Ok(Insertion {
        results: text,
        batch_sizes,
        reasks,
    })
}
