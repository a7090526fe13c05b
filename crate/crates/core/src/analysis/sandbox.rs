//! Child-process executor for generated scripts.
//!
//! Scripts run with the caller's privileges, but on Linux kernels with
//! Landlock their filesystem writes are confined to the workdir. Where
//! Landlock is unavailable, files created next to the workdir are reported
//! as policy violations instead. Either way, a timed-out script and all of
//! its children are gone before returning.

use std::collections::BTreeSet;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLOT_EXTENSIONS: [&str; 4] = ["png", "pdf", "jpg", "svg"];
/// Per-run scratch space (TMPDIR, tool caches) inside the workdir.
pub const SCRATCH_DIR: &str = ".sandbox";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub workdir: PathBuf,
    pub time_limit: Duration,
    /// Advisory only; the executor has no network namespace support.
    pub allow_network: bool,
    /// argv template; `{script}` is replaced with the script path.
    pub interpreter_cmd: Vec<String>,
    /// `sh -c` template; `{package}` is replaced with the package name.
    pub install_cmd: String,
}

impl SandboxPolicy {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            time_limit: Duration::from_secs(600),
            allow_network: true,
            interpreter_cmd: vec!["python3".into(), "{script}".into()],
            install_cmd: "python3 -m pip install {package}".into(),
        }
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = limit;
        self
    }

    pub fn with_interpreter(mut self, argv: Vec<String>) -> Self {
        self.interpreter_cmd = argv;
        self
    }

    pub fn with_install_cmd(mut self, cmd: impl Into<String>) -> Self {
        self.install_cmd = cmd.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_limit.is_zero() {
            return Err(Error::Precondition("sandbox time limit must be positive".into()));
        }
        if self.interpreter_cmd.is_empty() {
            return Err(Error::Precondition("interpreter command is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    /// Process exit code; -1 when killed by a signal.
    pub exit_status: i32,
    pub stdout: String,
    pub stderr: String,
    /// New files under the workdir, relative to it, sorted.
    pub new_files: Vec<PathBuf>,
    pub wall_time: Duration,
    /// Policy violations noticed during the run.
    pub warnings: Vec<String>,
    /// Whether kernel write confinement was in force.
    #[serde(default)]
    pub confined: bool,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_status == 0
    }

    pub fn plots(&self) -> Vec<&PathBuf> {
        self.new_files.iter().filter(|p| is_plot(p)).collect()
    }
}

pub fn is_plot(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| PLOT_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Which stream a chunk of output came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Stdout,
    Stderr,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Stdout => "stdout",
            Stream::Stderr => "stderr",
        }
    }
}

fn snapshot(root: &Path, skip: Option<&Path>, out: &mut BTreeSet<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(root) else {
        return;
    };
    for e in entries.flatten() {
        let path = e.path();
        if Some(path.as_path()) == skip {
            continue;
        }
        match e.file_type() {
            Ok(t) if t.is_dir() => snapshot(&path, skip, out),
            Ok(_) => {
                out.insert(path);
            }
            Err(_) => {}
        }
    }
}

/// Writes `code` to `script_name` inside the workdir and runs it.
pub fn execute_script(code: &str, script_name: &str, policy: &SandboxPolicy) -> Result<ExecResult> {
    execute_script_streaming(code, script_name, policy, &mut |_, _| {})
}

pub fn execute_script_streaming(
    code: &str,
    script_name: &str,
    policy: &SandboxPolicy,
    on_output: &mut dyn FnMut(Stream, &str),
) -> Result<ExecResult> {
    if code.trim().is_empty() {
        return Err(Error::Precondition("script is empty".into()));
    }
    if script_name.contains('/') || script_name.starts_with('.') {
        return Err(Error::PathEscape(script_name.into()));
    }
    policy.validate()?;
    std::fs::create_dir_all(&policy.workdir).map_err(|e| Error::io(&policy.workdir, e))?;
    let workdir = policy
        .workdir
        .canonicalize()
        .map_err(|e| Error::io(&policy.workdir, e))?;
    let script = workdir.join(script_name);
    std::fs::write(&script, code).map_err(|e| Error::io(&script, e))?;

    let argv: Vec<String> = policy
        .interpreter_cmd
        .iter()
        .map(|a| a.replace("{script}", &script.to_string_lossy()))
        .collect();
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..]);
    run(cmd, &workdir, policy.time_limit, &argv.join(" "), Some(&script), true, on_output)
}

/// Runs the install command for `package` in the workdir.
pub fn run_install(package: &str, policy: &SandboxPolicy) -> Result<ExecResult> {
    let valid = Regex::new(r"^[A-Za-z0-9][A-Za-z0-9._-]*$").expect("static regex");
    if !valid.is_match(package) {
        return Err(Error::Precondition(format!("refusing to install '{package}'")));
    }
    policy.validate()?;
    std::fs::create_dir_all(&policy.workdir).map_err(|e| Error::io(&policy.workdir, e))?;
    let workdir = policy
        .workdir
        .canonicalize()
        .map_err(|e| Error::io(&policy.workdir, e))?;
    let line = policy.install_cmd.replace("{package}", package);
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(&line);
    // installers write to site-packages, so they are never confined
    run(cmd, &workdir, policy.time_limit, &line, None, false, &mut |_, _| {})
}

fn run(
    mut cmd: Command,
    workdir: &Path,
    limit: Duration,
    command_line: &str,
    script: Option<&Path>,
    confine: bool,
    on_output: &mut dyn FnMut(Stream, &str),
) -> Result<ExecResult> {
    let parent = workdir.parent().map(Path::to_path_buf);
    let scratch = workdir.join(SCRATCH_DIR);
    let mut confined = false;
    if confine {
        let tmp = scratch.join("tmp");
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        cmd.env("TMPDIR", &tmp)
            .env("MPLCONFIGDIR", scratch.join("mpl"))
            .env("XDG_CACHE_HOME", scratch.join("cache"))
            .env("PYTHONDONTWRITEBYTECODE", "1");
        confined = landlock_guard::apply(&mut cmd, workdir);
        if !confined {
            tracing::debug!("landlock unavailable; falling back to escape detection");
        }
    }
    let mut before = BTreeSet::new();
    snapshot(workdir, Some(&scratch), &mut before);
    let mut outside_before = BTreeSet::new();
    if let Some(p) = &parent {
        snapshot(p, Some(workdir), &mut outside_before);
    }

    cmd.current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| Error::Spawn {
        command: command_line.to_string(),
        detail: e.to_string(),
    })?;
    let pgid = child.id() as libc::pid_t;

    let (tx, rx) = mpsc::channel::<(Stream, Vec<u8>)>();
    let mut readers = Vec::new();
    for (stream, pipe) in [
        (Stream::Stdout, child.stdout.take().map(|p| Box::new(p) as Box<dyn Read + Send>)),
        (Stream::Stderr, child.stderr.take().map(|p| Box::new(p) as Box<dyn Read + Send>)),
    ] {
        let Some(mut pipe) = pipe else { continue };
        let tx = tx.clone();
        readers.push(std::thread::spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match pipe.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        if tx.send((stream, buf[..n].to_vec())).is_err() {
                            break;
                        }
                    }
                }
            }
        }));
    }
    drop(tx);

    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let mut take = |stream: Stream, bytes: Vec<u8>, on_output: &mut dyn FnMut(Stream, &str)| {
        on_output(stream, &String::from_utf8_lossy(&bytes));
        match stream {
            Stream::Stdout => stdout.extend(bytes),
            Stream::Stderr => stderr.extend(bytes),
        }
    };

    let deadline = start + limit;
    let status = loop {
        while let Ok((s, b)) = rx.try_recv() {
            take(s, b, on_output);
        }
        match child.try_wait().map_err(|e| Error::io(workdir, e))? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                // the whole group, so grandchildren do not outlive the script
                unsafe {
                    libc::killpg(pgid, libc::SIGKILL);
                }
                let _ = child.wait();
                for r in readers {
                    let _ = r.join();
                }
                tracing::warn!(command = command_line, ?limit, "script timed out");
                return Err(Error::Timeout(limit));
            }
            None => {
                if let Ok((s, b)) = rx.recv_timeout(Duration::from_millis(20)) {
                    take(s, b, on_output);
                }
            }
        }
    };
    // children that kept the pipes open must not keep us waiting
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
    for r in readers {
        let _ = r.join();
    }
    while let Ok((s, b)) = rx.try_recv() {
        take(s, b, on_output);
    }
    let wall_time = start.elapsed();

    let mut after = BTreeSet::new();
    snapshot(workdir, Some(&scratch), &mut after);
    let new_files = after
        .difference(&before)
        .filter(|p| Some(p.as_path()) != script)
        .filter_map(|p| p.strip_prefix(workdir).ok().map(Path::to_path_buf))
        .collect();

    let mut warnings = Vec::new();
    if let Some(p) = &parent {
        let mut outside_after = BTreeSet::new();
        snapshot(p, Some(workdir), &mut outside_after);
        for escaped in outside_after.difference(&outside_before) {
            warnings.push(format!(
                "PolicyViolation: script created {} outside the sandbox; ignored",
                escaped.display()
            ));
        }
    }

    Ok(ExecResult {
        exit_status: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        new_files,
        wall_time,
        warnings,
        confined,
    })
}

#[cfg(target_os = "linux")]
mod landlock_guard {
    use std::os::fd::{AsRawFd, OwnedFd};
    use std::os::unix::process::CommandExt;
    use std::path::Path;
    use std::process::Command;

    use landlock::{
        path_beneath_rules, Access, AccessFs, CompatLevel, Compatible, Ruleset, RulesetAttr, RulesetCreatedAttr,
        ABI,
    };

    // landlock_restrict_self(2); not exported by every libc version
    const SYS_LANDLOCK_RESTRICT_SELF: libc::c_long = 446;

    /// Read and execute anywhere, write only beneath `workdir` (and the null
    /// device). Installed in the child between fork and exec; returns false
    /// when the kernel cannot enforce it.
    pub(super) fn apply(cmd: &mut Command, workdir: &Path) -> bool {
        let Some(fd) = ruleset(workdir) else {
            return false;
        };
        unsafe {
            cmd.pre_exec(move || {
                if libc::prctl(libc::PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                if libc::syscall(SYS_LANDLOCK_RESTRICT_SELF, fd.as_raw_fd(), 0) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
        true
    }

    fn ruleset(workdir: &Path) -> Option<OwnedFd> {
        let abi = ABI::V3;
        let created = Ruleset::default()
            .set_compatibility(CompatLevel::BestEffort)
            .handle_access(AccessFs::from_all(abi))
            .ok()?
            .create()
            .ok()?
            .add_rules(path_beneath_rules(["/"], AccessFs::from_read(abi)))
            .ok()?
            .add_rules(path_beneath_rules([workdir], AccessFs::from_all(abi)))
            .ok()?
            .add_rules(path_beneath_rules(["/dev/null"], AccessFs::from_all(abi)))
            .ok()?;
        created.into()
    }
}

#[cfg(not(target_os = "linux"))]
mod landlock_guard {
    pub(super) fn apply(_: &mut std::process::Command, _: &std::path::Path) -> bool {
        false
    }
}

/// Top-level module name from a Python missing-module error, if present.
pub fn missing_package(stderr: &str) -> Option<String> {
    let re = Regex::new(r#"(?:ModuleNotFoundError|ImportError): No module named '?([A-Za-z0-9_.]+)'?"#)
        .expect("static regex");
    re.captures_iter(stderr)
        .last()
        .map(|c| c[1].split('.').next().unwrap_or(&c[1]).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_package_parsing() {
        let tb = "Traceback (most recent call last):\n  File \"x.py\", line 1\nModuleNotFoundError: No module named 'astropy.io'\n";
        assert_eq!(missing_package(tb).as_deref(), Some("astropy"));
        assert_eq!(missing_package("ImportError: No module named foo").as_deref(), Some("foo"));
        assert_eq!(missing_package("NameError: x"), None);
    }

    #[test]
    fn plot_extensions() {
        assert!(is_plot(Path::new("a/b.PNG")));
        assert!(is_plot(Path::new("x.svg")));
        assert!(!is_plot(Path::new("x.csv")));
    }

    #[test]
    fn empty_script_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = SandboxPolicy::new(dir.path());
        assert!(matches!(execute_script("  ", "s.py", &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn shell_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = SandboxPolicy::new(dir.path().join("work"))
            .with_interpreter(vec!["sh".into(), "{script}".into()]);
        let r = execute_script("echo hello\necho oops >&2\ntouch out.png\n", "s.sh", &p).unwrap();
        assert_eq!(r.stdout, "hello\n");
        assert_eq!(r.stderr, "oops\n");
        assert_eq!(r.new_files, vec![PathBuf::from("out.png")]);
        assert!(r.success());
    }

    #[test]
    fn install_refuses_shell_metacharacters() {
        let dir = tempfile::tempdir().unwrap();
        let p = SandboxPolicy::new(dir.path());
        assert!(run_install("numpy; rm -rf /", &p).is_err());
    }

    #[test]
    fn writes_outside_workdir_never_land() {
        let dir = tempfile::tempdir().unwrap();
        let p = SandboxPolicy::new(dir.path().join("work"))
            .with_interpreter(vec!["sh".into(), "{script}".into()]);
        let r = execute_script("echo x > ../escaped.txt\necho y > inside.txt\n", "s.sh", &p).unwrap();
        assert!(r.new_files.contains(&PathBuf::from("inside.txt")));
        if r.confined {
            assert!(!dir.path().join("escaped.txt").exists());
            assert!(r.warnings.is_empty());
        } else {
            assert!(r.warnings.iter().any(|w| w.starts_with("PolicyViolation")));
        }
    }
}
