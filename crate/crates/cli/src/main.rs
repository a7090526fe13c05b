//! `sciweave` command line: one subcommand per pipeline verb.
//!
//! Exit codes: 0 success, 1 stage or runtime failure, 2 usage error.

use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sciweave_core::enhance::{enhance_input, ArxivFetcher, CommandOcr};
use sciweave_core::events::{EventSink, RunEvent};
use sciweave_core::llm::{AgentModels, Gateway, ModelId, ScriptedProvider};
use sciweave_core::paper::Journal;
use sciweave_core::pipeline::{run_all, run_stage, set_artifact, Mode, RunOptions, RunSettings, Stage, StageOutcome};
use sciweave_core::project::{ArtifactRole, ProjectDir};
use sciweave_core::runtime::{Conversation, Runtime};
use sciweave_core::Error as CoreError;
use sciweave_server::{Engine, ServeConfig, Server};

#[derive(Parser, Debug)]
#[command(name = "sciweave", version, about = "Multi-agent research pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Project directory.
    #[arg(long, global = true, env = "SCIWEAVE_PROJECT", default_value = ".")]
    project_dir: PathBuf,
    /// Mode for the idea and methods stages.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Model for every agent (`name` or `provider:name`).
    #[arg(long, global = true)]
    model: Option<String>,
    /// Paper template (APS or generic).
    #[arg(long, global = true, value_parser = parse_journal)]
    journal: Option<Journal>,
    #[arg(long, global = true, value_enum)]
    citations: Option<Toggle>,
    /// Message cap for planning/control sessions.
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    /// Consecutive failed steps tolerated in planning/control sessions.
    #[arg(long, global = true)]
    max_fails: Option<usize>,
    /// Machine-readable JSON lines on stdout and stderr.
    #[arg(long, global = true)]
    json: bool,
    /// Answer every model call from a JSON script instead of a provider.
    #[arg(long, global = true, env = "SCIWEAVE_SCRIPT")]
    script: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

fn parse_journal(s: &str) -> Result<Journal, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

#[derive(Args, Debug)]
struct Source {
    /// File to read, or `-` for stdin.
    #[arg(conflicts_with = "text", required_unless_present = "text")]
    file: Option<PathBuf>,
    /// Inline text.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create the project directory.
    Init,
    /// Write input.md.
    SetInput(Source),
    /// Append summaries of arXiv papers linked from input.md.
    EnhanceInput {
        /// Command converting a PDF on stdin to text on stdout.
        #[arg(long, default_value = "pdftotext - -")]
        ocr_cmd: String,
    },
    /// Generate idea.md.
    Idea,
    /// Supply idea.md by hand.
    SetIdea(Source),
    /// Check the idea against the literature (literature.md).
    CheckIdea,
    /// Generate methods.md.
    Methods,
    /// Supply methods.md by hand.
    SetMethods(Source),
    /// Run the analysis (results.md and Plots/).
    Results,
    /// Write the paper (paper_v1..4.tex and PDFs).
    Paper,
    /// Review the latest paper PDF (referee.md).
    Referee {
        /// Review this PDF instead of the latest paper version.
        #[arg(long)]
        pdf: Option<PathBuf>,
    },
    /// Run every stage in order.
    RunAll,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8000")]
        addr: SocketAddr,
        /// Directory holding one sub-directory per project.
        #[arg(long, default_value = "projects")]
        root: PathBuf,
        /// Require this bearer token on every route but health.
        #[arg(long, env = "SCIWEAVE_TOKEN", hide_env_values = true)]
        token: Option<String>,
        /// Largest accepted upload in bytes.
        #[arg(long, default_value_t = 32 * 1024 * 1024)]
        max_upload: usize,
        /// Seconds to wait for cancelled runs on shutdown.
        #[arg(long, default_value_t = 10)]
        drain_timeout: u64,
    },
}

/// An error that maps to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_tracing(cli.global.json);
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<Usage>().is_some()
                || matches!(
                    e.downcast_ref::<CoreError>().map(CoreError::root),
                    Some(CoreError::InvalidRequest(_) | CoreError::UnknownModel(_))
                );
            if cli.global.json {
                eprintln!("{}", serde_json::json!({ "kind": "error", "message": format!("{e:#}") }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn init_tracing(json: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

impl Global {
    fn settings(&self) -> RunSettings {
        RunSettings {
            mode: self.mode,
            model: self.model.clone(),
            journal: self.journal,
            citations: self.citations.map(|t| matches!(t, Toggle::On)),
            max_rounds: self.max_rounds,
            max_fails: self.max_fails,
        }
    }

    fn engine(&self) -> Result<Engine> {
        let (gateway, models) = match &self.script {
            Some(path) => {
                let provider = ScriptedProvider::from_file(path)
                    .with_context(|| format!("loading script {}", path.display()))?;
                (
                    Gateway::scripted(Arc::new(provider)),
                    AgentModels::uniform(ModelId::scripted()),
                )
            }
            None => (Gateway::from_env(), AgentModels::stock()),
        };
        let settings = self.settings();
        let models = settings.models(gateway.registry())?.unwrap_or(models);
        Ok(Engine::new(Arc::new(gateway))
            .with_models(models)
            .with_options(settings.apply(RunOptions::default())))
    }

    fn runtime(&self, engine: &Engine) -> Runtime {
        Runtime::new(engine.gateway.clone(), engine.models.clone()).with_events(Arc::new(Console { json: self.json }))
    }

    fn project(&self) -> Result<ProjectDir> {
        ProjectDir::open(&self.project_dir)
            .with_context(|| format!("opening project {} (run `sciweave init` first)", self.project_dir.display()))
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Init => {
            let p = ProjectDir::init(&g.project_dir)?;
            say(g.json, "init", &format!("initialized {}", p.root().display()));
            Ok(())
        }
        Command::SetInput(src) => set(g, ArtifactRole::Input, src),
        Command::SetIdea(src) => set(g, ArtifactRole::Idea, src),
        Command::SetMethods(src) => set(g, ArtifactRole::Methods, src),
        Command::EnhanceInput { ocr_cmd } => enhance(g, ocr_cmd),
        Command::Idea => stage(g, Stage::Idea, None),
        Command::CheckIdea => stage(g, Stage::Literature, None),
        Command::Methods => stage(g, Stage::Methods, None),
        Command::Results => stage(g, Stage::Analysis, None),
        Command::Paper => stage(g, Stage::Paper, None),
        Command::Referee { pdf } => stage(g, Stage::Review, pdf.as_deref()),
        Command::RunAll => all(g),
        Command::Serve {
            addr,
            root,
            token,
            max_upload,
            drain_timeout,
        } => {
            let config = ServeConfig {
                addr: *addr,
                root: root.clone(),
                max_upload: *max_upload,
                token: token.clone().filter(|t| !t.is_empty()),
                drain_timeout: Duration::from_secs(*drain_timeout),
            };
            serve(g, config)
        }
    }
}

fn read_source(src: &Source) -> Result<String> {
    if let Some(text) = &src.text {
        return Ok(text.clone());
    }
    match src.file.as_deref() {
        Some(p) if p == Path::new("-") => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf)?;
            Ok(buf)
        }
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Err(Usage("a file or --text is required".into()).into()),
    }
}

fn set(g: &Global, role: ArtifactRole, src: &Source) -> Result<()> {
    let text = read_source(src)?;
    let project = g.project()?;
    let path = set_artifact(&project, &role, &text)?;
    say(g.json, "wrote", &path.display().to_string());
    Ok(())
}

fn enhance(g: &Global, ocr_cmd: &str) -> Result<()> {
    let project = g.project()?;
    let engine = g.engine()?;
    let rt = g.runtime(&engine);
    let input = project.read_text(&ArtifactRole::Input)?;
    let ocr = CommandOcr {
        argv: ocr_cmd.split_whitespace().map(str::to_string).collect(),
    };
    let mut convo = Conversation::new(&rt, Some(&project), "enhance");
    let out = enhance_input(&input, &ArxivFetcher::new()?, &ocr, &mut convo)?;
    project.write_text(&ArtifactRole::Input, &out.text)?;
    say(
        g.json,
        "enhanced",
        &format!("{} paper(s) summarized into input.md", out.summarized.len()),
    );
    Ok(())
}

fn stage(g: &Global, stage: Stage, pdf: Option<&Path>) -> Result<()> {
    let project = g.project()?;
    let engine = g.engine()?;
    let rt = g.runtime(&engine);
    let mut opts = engine.options.clone();
    opts.review_pdf = pdf.map(Path::to_path_buf);
    let outcome = run_stage(&project, &rt, stage, &opts)?;
    report(g.json, &outcome);
    Ok(())
}

fn report(json: bool, o: &StageOutcome) {
    if json {
        let mut v = serde_json::to_value(o).unwrap_or_default();
        v["kind"] = "outcome".into();
        println!("{v}");
        return;
    }
    for w in &o.warnings {
        println!("[{}] warning: {w}", o.stage);
    }
    for out in &o.outputs {
        println!("[{}] wrote {out}", o.stage);
    }
}

fn all(g: &Global) -> Result<()> {
    let project = g.project()?;
    let engine = g.engine()?;
    let rt = g.runtime(&engine);
    let report_ = run_all(&project, &rt, &engine.options)?;
    for o in &report_.outcomes {
        report(g.json, o);
    }
    if g.json {
        println!("{}", serde_json::json!({ "kind": "manifest", "manifest": report_.manifest }));
    } else {
        for (stage, rec) in &report_.manifest.stages {
            println!("{stage:<11} {:?}", rec.status);
        }
    }
    match report_.error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn serve(g: &Global, config: ServeConfig) -> Result<()> {
    let drain = config.drain_timeout;
    // the gateway's blocking clients must be built outside the async runtime
    let engine = g.engine()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let result = rt.block_on(async move {
        let server = Server::bind(config, engine).await?;
        server.run(sciweave_server::shutdown_signal()).await
    });
    // blocking run threads get the drain window, then are abandoned
    rt.shutdown_timeout(drain);
    Ok(result?)
}

fn say(json: bool, kind: &str, message: &str) {
    if json {
        println!("{}", serde_json::json!({ "kind": kind, "message": message }));
    } else {
        println!("{message}");
    }
}

/// Prints run events on stdout.
struct Console {
    json: bool,
}

impl EventSink for Console {
    fn emit(&self, event: RunEvent) {
        let mut out = std::io::stdout().lock();
        if self.json {
            let _ = writeln!(out, "{}", serde_json::to_string(&event).unwrap_or_default());
            return;
        }
        let _ = match &event {
            RunEvent::StageStarted { stage } => writeln!(out, "==> {stage}"),
            RunEvent::AgentTurn {
                stage,
                agent,
                depth,
                text,
            } => {
                let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
                let first: String = first.chars().take(100).collect();
                writeln!(out, "[{stage}] {}{agent}: {first}", "  ".repeat(*depth as usize))
            }
            RunEvent::ExecOutput { stage, chunk, .. } => chunk
                .lines()
                .try_for_each(|l| writeln!(out, "[{stage}] | {l}")),
            RunEvent::Warning { stage, message } => writeln!(out, "[{stage}] warning: {message}"),
            RunEvent::StageDone { stage } => writeln!(out, "<== {stage} done"),
            RunEvent::StageFailed { stage, error } => writeln!(out, "!!! {stage} failed: {error}"),
            RunEvent::StageSkipped { stage, reason } => writeln!(out, "--- {stage} skipped: {reason}"),
        };
    }
}
