use std::path::PathBuf;
use std::time::Duration;

use sciweave_core::analysis::{execute_script, execute_script_streaming, run_install, SandboxPolicy, Stream};
use sciweave_core::Error;

fn sh(dir: &std::path::Path) -> SandboxPolicy {
    SandboxPolicy::new(dir.join("work")).with_interpreter(vec!["sh".into(), "{script}".into()])
}

#[test]
fn nonzero_exit_is_reported_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let r = execute_script("echo bad >&2\nexit 3\n", "f.sh", &sh(dir.path())).unwrap();
    assert_eq!(r.exit_status, 3);
    assert_eq!(r.stderr, "bad\n");
    assert!(!r.success());
}

#[test]
fn output_streams_in_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let r = execute_script_streaming("echo a\necho b >&2\n", "s.sh", &sh(dir.path()), &mut |s, c| {
        seen.push((s, c.to_string()))
    })
    .unwrap();
    assert!(seen.iter().any(|(s, c)| *s == Stream::Stdout && c.contains('a')));
    assert!(seen.iter().any(|(s, c)| *s == Stream::Stderr && c.contains('b')));
    assert_eq!(r.stdout, "a\n");
}

#[test]
fn plots_in_subdirectories_are_found() {
    let dir = tempfile::tempdir().unwrap();
    let r = execute_script("mkdir -p out\ntouch out/a.png out/b.csv\n", "p.sh", &sh(dir.path())).unwrap();
    assert_eq!(r.plots(), vec![&PathBuf::from("out/a.png")]);
    assert_eq!(r.new_files.len(), 2);
}

#[test]
fn timeout_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = sh(dir.path()).with_time_limit(Duration::from_millis(300));
    let started = std::time::Instant::now();
    assert!(matches!(execute_script("sleep 30\n", "t.sh", &p), Err(Error::Timeout(_))));
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn script_names_cannot_escape() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        execute_script("echo", "../x.sh", &sh(dir.path())),
        Err(Error::PathEscape(_))
    ));
}

#[test]
fn confined_scripts_still_have_a_temp_dir() {
    let dir = tempfile::tempdir().unwrap();
    let p = SandboxPolicy::new(dir.path().join("work"));
    let code = "import tempfile\nwith tempfile.NamedTemporaryFile() as f:\n    f.write(b'x')\nprint('ok')\n";
    let r = execute_script(code, "tmp.py", &p).unwrap();
    assert_eq!(r.stdout, "ok\n", "{}", r.stderr);
    assert!(r.new_files.is_empty(), "{:?}", r.new_files);
}

#[test]
fn install_runs_unconfined_in_workdir() {
    let dir = tempfile::tempdir().unwrap();
    let p = SandboxPolicy::new(dir.path().join("work")).with_install_cmd("echo {package} > ../installed.txt");
    let r = run_install("numpy", &p).unwrap();
    assert!(r.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("installed.txt")).unwrap(), "numpy\n");
}
