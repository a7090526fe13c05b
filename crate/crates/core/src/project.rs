//! File-based project store.
//!
//! A project is a directory holding one file per pipeline artifact:
//!
//! ```text
//! input.md  idea.md  literature.md  methods.md  results.md  referee.md
//! Plots/*   paper_v1..4.tex   paper_v1..4.pdf   paper.bib
//! transcript.jsonl  manifest.json  project.json
//! ```
//!
//! Writes go through a temp file in the destination directory followed by a
//! rename, so readers only ever observe complete versions. Writers of the same
//! role within one process are serialized by a per-path lock.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::AgentMessage;

pub const PLOTS_DIR: &str = "Plots";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const PROJECT_META_FILE: &str = "project.json";

/// Checkpoint number of a paper draft, always in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PaperVersion(u8);

impl PaperVersion {
    pub const ALL: [PaperVersion; 4] = [
        PaperVersion(1),
        PaperVersion(2),
        PaperVersion(3),
        PaperVersion(4),
    ];

    pub fn new(v: u8) -> Result<Self> {
        if (1..=4).contains(&v) {
            Ok(Self(v))
        } else {
            Err(Error::InvalidRequest(format!(
                "paper version must be 1..=4, got {v}"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn next(self) -> Option<Self> {
        Self::new(self.0 + 1).ok()
    }
}

impl TryFrom<u8> for PaperVersion {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PaperVersion> for u8 {
    fn from(v: PaperVersion) -> u8 {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArtifactRole {
    Input,
    Idea,
    Literature,
    Methods,
    Results,
    /// A file under `Plots/`, by file name.
    Plot(String),
    PaperTex(PaperVersion),
    PaperPdf(PaperVersion),
    PaperBib,
    Referee,
    Transcript,
}

impl ArtifactRole {
    /// Path relative to the project root.
    pub fn file_name(&self) -> String {
        match self {
            ArtifactRole::Input => "input.md".into(),
            ArtifactRole::Idea => "idea.md".into(),
            ArtifactRole::Literature => "literature.md".into(),
            ArtifactRole::Methods => "methods.md".into(),
            ArtifactRole::Results => "results.md".into(),
            ArtifactRole::Plot(name) => format!("{PLOTS_DIR}/{name}"),
            ArtifactRole::PaperTex(v) => format!("paper_v{}.tex", v.get()),
            ArtifactRole::PaperPdf(v) => format!("paper_v{}.pdf", v.get()),
            ArtifactRole::PaperBib => "paper.bib".into(),
            ArtifactRole::Referee => "referee.md".into(),
            ArtifactRole::Transcript => TRANSCRIPT_FILE.into(),
        }
    }

    /// Inverse of [`ArtifactRole::file_name`].
    pub fn from_file_name(name: &str) -> Option<Self> {
        let role = match name {
            "input.md" => ArtifactRole::Input,
            "idea.md" => ArtifactRole::Idea,
            "literature.md" => ArtifactRole::Literature,
            "methods.md" => ArtifactRole::Methods,
            "results.md" => ArtifactRole::Results,
            "paper.bib" => ArtifactRole::PaperBib,
            "referee.md" => ArtifactRole::Referee,
            TRANSCRIPT_FILE => ArtifactRole::Transcript,
            other => {
                if let Some(plot) = other.strip_prefix("Plots/") {
                    validate_plot_name(plot).ok()?;
                    return Some(ArtifactRole::Plot(plot.to_string()));
                }
                let (stem, ext) = other.rsplit_once('.')?;
                let v = stem.strip_prefix("paper_v")?.parse::<u8>().ok()?;
                let v = PaperVersion::new(v).ok()?;
                match ext {
                    "tex" => ArtifactRole::PaperTex(v),
                    "pdf" => ArtifactRole::PaperPdf(v),
                    _ => return None,
                }
            }
        };
        Some(role)
    }

    pub fn is_textual(&self) -> bool {
        !matches!(self, ArtifactRole::Plot(_) | ArtifactRole::PaperPdf(_))
    }
}

impl fmt::Display for ArtifactRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file_name())
    }
}

impl FromStr for ArtifactRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ArtifactRole::from_file_name(s).ok_or_else(|| Error::NotFound(s.to_string()))
    }
}

fn validate_plot_name(name: &str) -> Result<()> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name.contains('/')
        || name.contains('\\')
        || name.contains('\0');
    if bad {
        return Err(Error::PathEscape(format!("{PLOTS_DIR}/{name}")));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectMeta {
    created_at: DateTime<Utc>,
}

/// Handle on an initialized project directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectDir {
    root: PathBuf,
    created_at: DateTime<Utc>,
}

static ROLE_LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();

fn role_lock(path: &Path) -> Arc<Mutex<()>> {
    let locks = ROLE_LOCKS.get_or_init(Default::default);
    let mut map = locks.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(path.to_path_buf()).or_default().clone()
}

impl ProjectDir {
    /// Creates the scaffold under `root` (or adopts an existing one).
    pub fn init(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if root.exists() && !root.is_dir() {
            return Err(Error::NotADirectory(root.to_path_buf()));
        }
        fs::create_dir_all(root.join(PLOTS_DIR)).map_err(|e| Error::io(root, e))?;
        let root = root.canonicalize().map_err(|e| Error::io(root, e))?;

        let meta_path = root.join(PROJECT_META_FILE);
        let created_at = match fs::read(&meta_path) {
            Ok(bytes) => serde_json::from_slice::<ProjectMeta>(&bytes)?.created_at,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let meta = ProjectMeta {
                    created_at: Utc::now(),
                };
                atomic_write(&meta_path, &serde_json::to_vec_pretty(&meta)?)?;
                meta.created_at
            }
            Err(e) => return Err(Error::io(&meta_path, e)),
        };
        Ok(Self { root, created_at })
    }

    /// Opens a project that must already have been initialized.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.join(PROJECT_META_FILE).is_file() {
            return Err(Error::NotFound(format!(
                "no project at {}",
                root.display()
            )));
        }
        Self::init(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join(PLOTS_DIR)
    }

    /// Absolute path of an artifact. Fails for plot names that would leave `Plots/`.
    pub fn path_of(&self, role: &ArtifactRole) -> Result<PathBuf> {
        if let ArtifactRole::Plot(name) = role {
            validate_plot_name(name)?;
        }
        Ok(self.root.join(role.file_name()))
    }

    /// Resolves a caller-supplied relative path, rejecting anything outside the root.
    pub fn resolve(&self, relative: &str) -> Result<PathBuf> {
        let rel = Path::new(relative);
        if rel.is_absolute()
            || rel
                .components()
                .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
        {
            return Err(Error::PathEscape(relative.to_string()));
        }
        Ok(self.root.join(rel))
    }

    pub fn exists(&self, role: &ArtifactRole) -> bool {
        self.path_of(role).map(|p| p.is_file()).unwrap_or(false)
    }

    pub fn write_artifact(&self, role: &ArtifactRole, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path_of(role)?;
        if role.is_textual() && std::str::from_utf8(bytes).is_err() {
            return Err(Error::InvalidRequest(format!(
                "{} must be UTF-8",
                role.file_name()
            )));
        }
        let lock = role_lock(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        atomic_write(&path, bytes)?;
        Ok(path)
    }

    pub fn write_text(&self, role: &ArtifactRole, text: &str) -> Result<PathBuf> {
        self.write_artifact(role, text.as_bytes())
    }

    pub fn read_artifact(&self, role: &ArtifactRole) -> Result<Vec<u8>> {
        let path = self.path_of(role)?;
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::NotFound(role.file_name()))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn read_text(&self, role: &ArtifactRole) -> Result<String> {
        let bytes = self.read_artifact(role)?;
        String::from_utf8(bytes)
            .map_err(|_| Error::InvalidRequest(format!("{} is not UTF-8", role.file_name())))
    }

    pub fn remove_artifact(&self, role: &ArtifactRole) -> Result<()> {
        let path = self.path_of(role)?;
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Plot file names in byte-wise lexicographic order.
    pub fn list_plots(&self) -> Result<Vec<String>> {
        let dir = self.plots_dir();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(dir, e)),
        };
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if !entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
                continue;
            }
            if let Some(name) = entry.file_name().to_str() {
                if !name.starts_with('.') {
                    names.push(name.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// Every artifact currently present, keyed by role.
    pub fn artifacts(&self) -> Result<BTreeMap<ArtifactRole, PathBuf>> {
        let mut map = BTreeMap::new();
        let fixed = [
            ArtifactRole::Input,
            ArtifactRole::Idea,
            ArtifactRole::Literature,
            ArtifactRole::Methods,
            ArtifactRole::Results,
            ArtifactRole::PaperBib,
            ArtifactRole::Referee,
            ArtifactRole::Transcript,
        ];
        let versioned = PaperVersion::ALL
            .iter()
            .flat_map(|v| [ArtifactRole::PaperTex(*v), ArtifactRole::PaperPdf(*v)]);
        for role in fixed.into_iter().chain(versioned) {
            if self.exists(&role) {
                map.insert(role.clone(), PathBuf::from(role.file_name()));
            }
        }
        for plot in self.list_plots()? {
            let role = ArtifactRole::Plot(plot);
            map.insert(role.clone(), PathBuf::from(role.file_name()));
        }
        Ok(map)
    }

    /// Appends one JSON line per message to the project transcript.
    pub fn append_transcript(&self, entry: &TranscriptEntry) -> Result<()> {
        let path = self.root.join(TRANSCRIPT_FILE);
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let lock = role_lock(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(&line).map_err(|e| Error::io(&path, e))
    }

    pub fn read_transcript(&self) -> Result<Vec<TranscriptEntry>> {
        let path = self.root.join(TRANSCRIPT_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }

    /// Writes a file under a bookkeeping subdirectory (`codebase/`, `ocr/`, ...).
    pub fn write_aux(&self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.resolve(relative)?;
        atomic_write(&path, bytes)?;
        Ok(path)
    }
}

/// One line of `transcript.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: String,
    /// 0 for the main conversation, 1 for a nested repair exchange.
    #[serde(default)]
    pub depth: u8,
    #[serde(flatten)]
    pub message: AgentMessage,
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::PathEscape(path.display().to_string()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_data().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
