//! Checkpoint compilation with one automatic fix round.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::latex::PaperDraft;
use crate::analysis::extract_code_blocks;
use crate::error::{Error, Result};
use crate::project::{ArtifactRole, ProjectDir};
use crate::prompts;
use crate::runtime::Conversation;

pub const FIXER_AGENT: &str = "latex_fixer";
pub const BUILD_DIR: &str = "paper_build";
const LOG_TAIL: usize = 4000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypesetReport {
    /// Present when a PDF was produced.
    pub pdf: Option<PathBuf>,
    pub log: String,
}

/// Turns `<workdir>/<stem>.tex` into a PDF.
pub trait Typesetter: Send + Sync {
    /// `Err(Spawn)` means the toolchain is unavailable; compile errors are a
    /// report with `pdf: None`.
    fn compile(&self, workdir: &Path, stem: &str) -> Result<TypesetReport>;
}

/// `pdflatex`, `bibtex` (when a bibliography exists), then `pdflatex` twice.
#[derive(Debug, Clone)]
pub struct CommandTypesetter {
    pub latex: String,
    pub bibtex: String,
}

impl Default for CommandTypesetter {
    fn default() -> Self {
        Self {
            latex: "pdflatex".into(),
            bibtex: "bibtex".into(),
        }
    }
}

impl CommandTypesetter {
    fn run(&self, program: &str, args: &[&str], workdir: &Path, log: &mut String) -> Result<bool> {
        let out = Command::new(program)
            .args(args)
            .current_dir(workdir)
            .output()
            .map_err(|e| Error::Spawn {
                command: program.to_string(),
                detail: e.to_string(),
            })?;
        log.push_str(&String::from_utf8_lossy(&out.stdout));
        log.push_str(&String::from_utf8_lossy(&out.stderr));
        Ok(out.status.success())
    }
}

impl Typesetter for CommandTypesetter {
    fn compile(&self, workdir: &Path, stem: &str) -> Result<TypesetReport> {
        let tex = format!("{stem}.tex");
        let args = ["-interaction=nonstopmode", "-halt-on-error", tex.as_str()];
        let mut log = String::new();
        let mut ok = self.run(&self.latex, &args, workdir, &mut log)?;
        if ok && workdir.join("paper.bib").exists() {
            // bibtex failures surface in the final pdflatex pass
            let _ = self.run(&self.bibtex, &[stem], workdir, &mut log)?;
        }
        for _ in 0..2 {
            if ok {
                ok = self.run(&self.latex, &args, workdir, &mut log)?;
            }
        }
        let pdf = workdir.join(format!("{stem}.pdf"));
        Ok(TypesetReport {
            pdf: (ok && pdf.exists()).then_some(pdf),
            log,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u8,
    pub tex: String,
    pub pdf: bool,
    pub fixer_used: bool,
    pub error: Option<String>,
}

fn tail(log: &str) -> &str {
    let mut start = log.len().saturating_sub(LOG_TAIL);
    while !log.is_char_boundary(start) {
        start += 1;
    }
    &log[start..]
}

/// Renders, persists and compiles one paper version.
///
/// The `.tex` is always written. A failed compile gets one fixer round;
/// a missing toolchain skips it. Compile failures are warnings, never fatal.
pub fn compile_checkpoint(
    project: &ProjectDir,
    draft: &PaperDraft,
    typesetter: &dyn Typesetter,
    convo: &mut Conversation<'_>,
) -> Result<Checkpoint> {
    let version = draft.version;
    let mut source = draft.render();
    project.write_text(&ArtifactRole::PaperTex(version), &source)?;
    if !draft.bib.is_empty() {
        project.write_text(&ArtifactRole::PaperBib, &draft.bibtex())?;
        project.write_aux(&format!("{BUILD_DIR}/paper.bib"), draft.bibtex().as_bytes())?;
    }
    let stem = format!("paper_v{}", version.get());
    let workdir = project.resolve(BUILD_DIR)?;
    let mut checkpoint = Checkpoint {
        version: version.get(),
        tex: ArtifactRole::PaperTex(version).file_name(),
        pdf: false,
        fixer_used: false,
        error: None,
    };

    let attempt = |source: &str| -> Result<TypesetReport> {
        project.write_aux(&format!("{BUILD_DIR}/{stem}.tex"), source.as_bytes())?;
        typesetter.compile(&workdir, &stem)
    };

    let report = match attempt(&source) {
        Ok(r) => r,
        Err(e @ Error::Spawn { .. }) => {
            convo.warn(format!("{}: {e}; skipping the fixer", Error::CompileFailed(version.get())));
            checkpoint.error = Some(e.to_string());
            return Ok(checkpoint);
        }
        Err(e) => return Err(e),
    };
    let report = match report.pdf {
        Some(_) => report,
        None => {
            checkpoint.fixer_used = true;
            let req = convo
                .runtime()
                .request(FIXER_AGENT)
                .system(prompts::LATEX_FIXER)
                .user(prompts::latex_fix(&source, tail(&report.log)));
            let reply = convo.ask(&req)?;
            let fixed = extract_code_blocks(&reply)
                .into_iter()
                .next()
                .map(|b| b.code)
                .unwrap_or(reply);
            if fixed.contains("\\begin{document}") {
                source = fixed;
                project.write_text(&ArtifactRole::PaperTex(version), &source)?;
                match attempt(&source) {
                    Ok(r) => r,
                    Err(e) => {
                        checkpoint.error = Some(e.to_string());
                        convo.warn(format!("{}: {e}", Error::CompileFailed(version.get())));
                        return Ok(checkpoint);
                    }
                }
            } else {
                report
            }
        }
    };
    match report.pdf {
        Some(pdf) => {
            let bytes = std::fs::read(&pdf).map_err(|e| Error::io(&pdf, e))?;
            project.write_artifact(&ArtifactRole::PaperPdf(version), &bytes)?;
            checkpoint.pdf = true;
        }
        None => {
            let err = Error::CompileFailed(version.get());
            convo.warn(err.to_string());
            checkpoint.error = Some(err.to_string());
        }
    }
    Ok(checkpoint)
}

