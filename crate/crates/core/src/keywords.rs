//! Keyword selection from a controlled vocabulary.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{AgentMessage, Role};
use crate::prompts;
use crate::runtime::Conversation;

pub const KEYWORD_AGENT: &str = "keyword_selector";
pub const MAX_DOMAINS: usize = 3;
pub const MAX_SUBFIELDS: usize = 3;
pub const AREAS_PER_SUBFIELD: usize = 3;

const UNESCO: &str = include_str!("../data/vocab/unesco.txt");
const AAAI: &str = include_str!("../data/vocab/aaai.txt");
const AAS: &str = include_str!("../data/vocab/aas.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabularyKind {
    UnescoHierarchical,
    AaaiFlat,
    AasFlat,
}

impl FromStr for VocabularyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unesco" | "unesco_hierarchical" => Ok(Self::UnescoHierarchical),
            "aaai" | "aaai_flat" => Ok(Self::AaaiFlat),
            "aas" | "aas_flat" => Ok(Self::AasFlat),
            other => Err(Error::InvalidRequest(format!("unknown vocabulary '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub code: String,
    pub name: String,
    pub children: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entries {
    Tree(Vec<Node>),
    Flat(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub kind: VocabularyKind,
    pub entries: Entries,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses one term per line.
pub fn parse_flat(text: &str) -> Result<Vec<String>> {
    let terms: Vec<String> = content_lines(text).map(|(_, l)| l.trim().to_string()).collect();
    if terms.is_empty() {
        return Err(Error::VocabularyFormat {
            line: 0,
            detail: "no terms".into(),
        });
    }
    Ok(terms)
}

/// Parses a three-level outline indented by two spaces per level.
pub fn parse_outline(text: &str) -> Result<Vec<Node>> {
    let mut roots: Vec<Node> = Vec::new();
    for (line, raw) in content_lines(text) {
        let indent = raw.len() - raw.trim_start().len();
        let err = |detail: &str| Error::VocabularyFormat {
            line,
            detail: detail.to_string(),
        };
        if indent % 2 != 0 || indent > 4 {
            return Err(err("indentation must be 0, 2 or 4 spaces"));
        }
        let (code, name) = raw
            .trim()
            .split_once(' ')
            .ok_or_else(|| err("expected '<code> <name>'"))?;
        let node = Node {
            code: code.to_string(),
            name: name.trim().to_string(),
            children: Vec::new(),
        };
        match indent / 2 {
            0 => roots.push(node),
            1 => roots
                .last_mut()
                .ok_or_else(|| err("subfield before any domain"))?
                .children
                .push(node),
            _ => roots
                .last_mut()
                .and_then(|d| d.children.last_mut())
                .ok_or_else(|| err("area before any subfield"))?
                .children
                .push(node),
        }
    }
    if roots.is_empty() {
        return Err(Error::VocabularyFormat {
            line: 0,
            detail: "no domains".into(),
        });
    }
    Ok(roots)
}

impl Vocabulary {
    pub fn builtin(kind: VocabularyKind) -> Result<Self> {
        let entries = match kind {
            VocabularyKind::UnescoHierarchical => Entries::Tree(parse_outline(UNESCO)?),
            VocabularyKind::AaaiFlat => Entries::Flat(parse_flat(AAAI)?),
            VocabularyKind::AasFlat => Entries::Flat(parse_flat(AAS)?),
        };
        Ok(Self { kind, entries })
    }

    pub fn from_text(kind: VocabularyKind, text: &str) -> Result<Self> {
        let entries = match kind {
            VocabularyKind::UnescoHierarchical => Entries::Tree(parse_outline(text)?),
            _ => Entries::Flat(parse_flat(text)?),
        };
        Ok(Self { kind, entries })
    }

    /// Every term at any level.
    pub fn all_terms(&self) -> Vec<String> {
        match &self.entries {
            Entries::Flat(t) => t.clone(),
            Entries::Tree(roots) => {
                let mut out = Vec::new();
                for d in roots {
                    out.push(d.name.clone());
                    for s in &d.children {
                        out.push(s.name.clone());
                        out.extend(s.children.iter().map(|a| a.name.clone()));
                    }
                }
                out
            }
        }
    }

    pub fn contains(&self, term: &str) -> bool {
        self.all_terms().iter().any(|t| t == term)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordSelection {
    pub keywords: Vec<String>,
    pub domains: Vec<String>,
    pub subfields: BTreeMap<String, Vec<String>>,
    pub areas: BTreeMap<String, Vec<String>>,
    pub calls: usize,
}

fn clean(line: &str) -> String {
    let mut s = line.trim();
    s = s.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && s[digits..].starts_with(['.', ')']) {
        s = s[digits + 1..].trim_start();
    }
    s.trim_matches(|c| c == '"' || c == '`' || c == '\'').trim().trim_end_matches(',').trim().to_string()
}

/// Maps reply lines onto candidates; returns (matches, off-vocabulary terms).
fn match_reply(reply: &str, candidates: &[String]) -> (Vec<String>, Vec<String>) {
    let mut hits = Vec::new();
    let mut bad = Vec::new();
    for line in reply.lines() {
        let term = clean(line);
        if term.is_empty() {
            continue;
        }
        match candidates.iter().find(|c| c.eq_ignore_ascii_case(&term)) {
            Some(c) if !hits.contains(c) => hits.push(c.clone()),
            Some(_) => {}
            None => bad.push(term),
        }
    }
    (hits, bad)
}

struct Selector<'c, 'a> {
    convo: &'c mut Conversation<'a>,
    text: String,
    calls: usize,
}

impl Selector<'_, '_> {
    /// One selection with a single re-ask on off-vocabulary output.
    fn pick(&mut self, level: &str, candidates: &[String], limit: &str, cap: usize) -> Result<Vec<String>> {
        let req = self
            .convo
            .runtime()
            .request(KEYWORD_AGENT)
            .system(prompts::KEYWORD_SYSTEM)
            .user(prompts::keyword_select(&self.text, level, candidates, limit));
        self.calls += 1;
        let reply = self.convo.ask(&req)?;
        let (mut hits, bad) = match_reply(&reply, candidates);
        if !bad.is_empty() {
            let retry = req
                .message(AgentMessage::text(KEYWORD_AGENT, Role::Assistant, reply))
                .user(prompts::keyword_reask(&bad));
            self.calls += 1;
            let reply = self.convo.ask(&retry)?;
            let (again, bad) = match_reply(&reply, candidates);
            if let Some(term) = bad.into_iter().next() {
                return Err(Error::OffVocabulary(term));
            }
            hits = again;
        }
        if hits.len() > cap {
            self.convo.warn(format!(
                "keyword agent picked {} {level}; keeping the first {cap}",
                hits.len()
            ));
            hits.truncate(cap);
        }
        Ok(hits)
    }
}

/// Selects `n` keywords characterizing `text`.
///
/// Hierarchical vocabularies go through domains (≤3), subfields (≤3 per
/// domain), areas (3 per subfield, fewer if unavailable) and a final pick of
/// `n` from the aggregate; flat vocabularies use a single pick.
pub fn select_keywords(
    text: &str,
    vocab: &Vocabulary,
    n: usize,
    convo: &mut Conversation<'_>,
) -> Result<KeywordSelection> {
    if n == 0 {
        return Err(Error::Precondition("keyword count must be at least 1".into()));
    }
    let mut sel = Selector {
        convo,
        text: text.to_string(),
        calls: 0,
    };
    let mut out = KeywordSelection::default();
    match &vocab.entries {
        Entries::Flat(terms) => {
            out.keywords = sel.pick("keywords", terms, &format!("the {n} most relevant"), n)?;
        }
        Entries::Tree(roots) => {
            let names: Vec<String> = roots.iter().map(|d| d.name.clone()).collect();
            out.domains = sel.pick("domains", &names, "at most 3", MAX_DOMAINS)?;
            let mut aggregate: Vec<String> = out.domains.clone();
            for dname in &out.domains {
                let domain = roots.iter().find(|d| &d.name == dname).expect("picked from roots");
                let subs: Vec<String> = domain.children.iter().map(|s| s.name.clone()).collect();
                if subs.is_empty() {
                    continue;
                }
                let picked = sel.pick("subfields", &subs, "at most 3", MAX_SUBFIELDS)?;
                for sname in &picked {
                    aggregate.push(sname.clone());
                    let sub = domain.children.iter().find(|s| &s.name == sname).expect("picked");
                    let areas: Vec<String> = sub.children.iter().map(|a| a.name.clone()).collect();
                    if areas.is_empty() {
                        continue;
                    }
                    let want = AREAS_PER_SUBFIELD.min(areas.len());
                    let chosen = sel.pick("specific areas", &areas, &format!("exactly {want}"), want)?;
                    aggregate.extend(chosen.iter().cloned());
                    out.areas.insert(sname.clone(), chosen);
                }
                out.subfields.insert(dname.clone(), picked);
            }
            let mut unique = Vec::new();
            for t in aggregate {
                if !unique.contains(&t) {
                    unique.push(t);
                }
            }
            out.keywords = sel.pick("keywords", &unique, &format!("the {n} most relevant"), n)?;
        }
    }
    out.calls = sel.calls;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_vocabularies_load() {
        let u = Vocabulary::builtin(VocabularyKind::UnescoHierarchical).unwrap();
        let Entries::Tree(roots) = &u.entries else { panic!() };
        assert!(roots.len() >= 8);
        for d in roots {
            assert!(!d.children.is_empty(), "{}", d.name);
            for s in &d.children {
                assert!(!s.children.is_empty(), "{}", s.name);
                assert!(s.children.iter().all(|a| a.children.is_empty()));
            }
        }
        assert!(Vocabulary::builtin(VocabularyKind::AaaiFlat).unwrap().contains("ML: Clustering"));
        assert!(Vocabulary::builtin(VocabularyKind::AasFlat).unwrap().contains("dark matter"));
    }

    #[test]
    fn outline_errors_carry_line_numbers() {
        let bad = "12 Mathematics\n   1209 Statistics\n";
        assert!(matches!(parse_outline(bad), Err(Error::VocabularyFormat { line: 2, .. })));
        assert!(matches!(parse_outline("  1209 Statistics\n"), Err(Error::VocabularyFormat { line: 1, .. })));
    }

    #[test]
    fn reply_cleaning() {
        let c = vec!["Dark matter".to_string(), "Galaxies".to_string()];
        let (hits, bad) = match_reply("1. dark matter\n- Galaxies\n* Unicorns\n", &c);
        assert_eq!(hits, c);
        assert_eq!(bad, vec!["Unicorns".to_string()]);
    }
}
