//! Draft model and LaTeX rendering.

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::project::PaperVersion;

const APS_TEMPLATE: &str = include_str!("../../data/templates/aps.tex");
const GENERIC_TEMPLATE: &str = include_str!("../../data/templates/generic.tex");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Journal {
    #[default]
    Aps,
    Generic,
}

impl Journal {
    pub fn template(self) -> &'static str {
        match self {
            Journal::Aps => APS_TEMPLATE,
            Journal::Generic => GENERIC_TEMPLATE,
        }
    }

    pub fn bib_style(self) -> &'static str {
        match self {
            Journal::Aps => "apsrev4-2",
            Journal::Generic => "plain",
        }
    }
}

impl fmt::Display for Journal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Journal::Aps => "APS",
            Journal::Generic => "generic",
        })
    }
}

impl FromStr for Journal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aps" => Ok(Journal::Aps),
            "generic" | "article" | "none" => Ok(Journal::Generic),
            other => Err(Error::InvalidRequest(format!(
                "unknown journal '{other}' (expected APS or generic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionName {
    Introduction,
    Methods,
    Results,
    Conclusions,
}

impl SectionName {
    pub const ALL: [SectionName; 4] = [
        SectionName::Introduction,
        SectionName::Methods,
        SectionName::Results,
        SectionName::Conclusions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionName::Introduction => "Introduction",
            SectionName::Methods => "Methods",
            SectionName::Results => "Results",
            SectionName::Conclusions => "Conclusions",
        }
    }
}

impl fmt::Display for SectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Figure {
    /// File name under `Plots/`.
    pub file: String,
    pub caption: String,
    pub label: String,
    pub batch_index: usize,
}

impl Figure {
    pub fn environment(&self) -> String {
        format!(
            "\\begin{{figure}}\n\\centering\n\\includegraphics[width=\\columnwidth]{{{}}}\n\\caption{{{}}}\n\\label{{{}}}\n\\end{{figure}}",
            self.file,
            self.caption.trim(),
            self.label
        )
    }

    /// Occurrences of this figure's graphic in `text`.
    pub fn count_in(&self, text: &str) -> usize {
        let re = Regex::new(&format!(
            r"\\includegraphics(?:\[[^\]]*\])?\{{{}\}}",
            regex::escape(&self.file)
        ))
        .expect("escaped regex");
        re.find_iter(text).count()
    }
}

/// Label derived from a plot file name: `fig:` plus its sanitized stem.
pub fn figure_label(file: &str) -> String {
    let stem = file.rsplit_once('.').map(|(s, _)| s).unwrap_or(file);
    let clean: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("fig:{clean}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub arxiv_id: String,
    pub key: String,
    pub bibtex: String,
    pub cited_in: SectionName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperDraft {
    pub title: String,
    pub abstract_text: String,
    pub keywords: Vec<String>,
    pub sections: Vec<(SectionName, String)>,
    pub figures: Vec<Figure>,
    pub bib: Vec<BibEntry>,
    pub version: PaperVersion,
    pub journal: Journal,
}

impl PaperDraft {
    pub fn section(&self, name: SectionName) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.as_str())
    }

    pub fn set_section(&mut self, name: SectionName, text: String) {
        match self.sections.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = text,
            None => self.sections.push((name, text)),
        }
    }

    pub fn bibtex(&self) -> String {
        self.bib
            .iter()
            .map(|b| format!("{}\n", b.bibtex.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render(&self) -> String {
        let mut body = String::new();
        for (name, text) in &self.sections {
            body.push_str(&format!("\\section{{{name}}}\n{}\n\n", text.trim()));
        }
        let bibliography = if self.bib.is_empty() {
            String::new()
        } else {
            format!(
                "\\bibliographystyle{{{}}}\n\\bibliography{{paper}}",
                self.journal.bib_style()
            )
        };
        self.journal
            .template()
            .replace("<<TITLE>>", self.title.trim())
            .replace("<<ABSTRACT>>", self.abstract_text.trim())
            .replace("<<KEYWORDS>>", &self.keywords.join(", "))
            .replace("<<BODY>>", body.trim_end())
            .replace("<<BIBLIOGRAPHY>>", &bibliography)
    }
}

/// Content of `\begin{name} ... \end{name}`, trimmed.
pub fn delimited_block(text: &str, name: &str) -> Option<String> {
    let open = format!("\\begin{{{name}}}");
    let close = format!("\\end{{{name}}}");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim().to_string())
}

/// Drops a wrapping code fence and a leading `\section{..}` line, if present.
pub fn clean_section(text: &str) -> String {
    let mut t = text.trim();
    if t.starts_with("```") {
        if let Some(block) = crate::analysis::extract_code_blocks(t).into_iter().next() {
            return clean_section(&block.code);
        }
    }
    if t.starts_with("\\section") {
        t = t.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
    }
    t.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(journal: Journal) -> PaperDraft {
        PaperDraft {
            title: "T".into(),
            abstract_text: "A".into(),
            keywords: vec!["k1".into(), "k2".into()],
            sections: SectionName::ALL
                .iter()
                .map(|s| (*s, format!("{s} body")))
                .collect(),
            figures: vec![],
            bib: vec![],
            version: PaperVersion::new(1).unwrap(),
            journal,
        }
    }

    #[test]
    fn aps_template_selected() {
        let tex = draft(Journal::Aps).render();
        assert!(tex.contains("revtex4-2"));
        assert!(tex.contains("\\section{Results}\nResults body"));
        assert!(!tex.contains("<<"));
        assert!(!tex.contains("\\bibliography{"));
        assert!(draft(Journal::Generic).render().contains("{article}"));
    }

    #[test]
    fn blocks_and_labels() {
        let r = "junk \\begin{Title}\n My title \n\\end{Title} \\begin{Abstract}abs\\end{Abstract}";
        assert_eq!(delimited_block(r, "Title").unwrap(), "My title");
        assert_eq!(delimited_block(r, "Abstract").unwrap(), "abs");
        assert_eq!(delimited_block(r, "Missing"), None);
        assert_eq!(figure_label("Loss Curve-1.png"), "fig:loss_curve_1");
    }

    #[test]
    fn figure_counting() {
        let f = Figure {
            file: "a.png".into(),
            caption: "c".into(),
            label: "fig:a".into(),
            batch_index: 0,
        };
        let env = f.environment();
        assert_eq!(f.count_in(&env), 1);
        assert_eq!(f.count_in(&format!("{env}\n{env}")), 2);
        assert_eq!(f.count_in("\\includegraphics{ba.png}"), 0);
    }

    #[test]
    fn section_cleanup() {
        assert_eq!(clean_section("```latex\n\\section{Intro}\nHello\n```"), "Hello");
        assert_eq!(clean_section("Plain"), "Plain");
    }
}
