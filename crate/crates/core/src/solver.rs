//! External SMT solver processes.
//!
//! Each job writes its script to a temporary file and runs the solver in a
//! fresh process group, so a timeout can kill the solver and anything it
//! spawned. `sat` answers are decoded and replayed through the interpreter
//! before they become UNSAFE; a witness that fails replay is reported as
//! SOLVER_ERROR.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{decode_model, GoalMode, SmtScript};
use crate::verdict::{Status, Verdict};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver `{name}`: {path} is not an executable file")]
    NotFound { name: String, path: PathBuf },
    #[error("solver `{name}` failed its version probe: {reason}")]
    Probe { name: String, reason: String },
    #[error("malformed solver spec `{0}` (expected name=/path)")]
    BadSpec(String),
}

/// Model-output dialect and default command line of a solver family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Z3,
    Cvc5,
    Bitwuzla,
    Boolector,
    Yices,
    Generic,
}

impl Dialect {
    pub fn from_name(name: &str) -> Dialect {
        let n = name.to_ascii_lowercase();
        if n.starts_with("z3") {
            Dialect::Z3
        } else if n.starts_with("cvc") {
            Dialect::Cvc5
        } else if n.starts_with("bitwuzla") {
            Dialect::Bitwuzla
        } else if n.starts_with("boolector") {
            Dialect::Boolector
        } else if n.starts_with("yices") {
            Dialect::Yices
        } else {
            Dialect::Generic
        }
    }

    /// Argument template; `{file}` is replaced by the script path.
    pub fn default_args(self) -> Vec<String> {
        let args: &[&str] = match self {
            Dialect::Z3 => &["-smt2", "{file}"],
            Dialect::Cvc5 => &["--lang=smt2", "{file}"],
            Dialect::Bitwuzla => &["{file}"],
            Dialect::Boolector => &["--smt2", "-m", "{file}"],
            Dialect::Yices => &["{file}"],
            Dialect::Generic => &["{file}"],
        };
        args.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub name: String,
    pub path: PathBuf,
    pub args: Vec<String>,
    pub dialect: Dialect,
}

impl SolverSpec {
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>) -> SolverSpec {
        let name = name.into();
        let dialect = Dialect::from_name(&name);
        SolverSpec { path: path.into(), args: dialect.default_args(), dialect, name }
    }

    /// Parses `name=/path/to/binary`.
    pub fn parse(spec: &str) -> Result<SolverSpec, SolverError> {
        match spec.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok(SolverSpec::new(name, path)),
            _ => Err(SolverError::BadSpec(spec.to_string())),
        }
    }

    /// Looks for `name` in `dir`, then on `PATH`.
    pub fn discover(name: &str, dir: Option<&Path>) -> Option<SolverSpec> {
        let path = std::env::var_os("PATH").unwrap_or_default();
        let candidates = dir.into_iter().map(Path::to_path_buf).chain(std::env::split_paths(&path));
        for d in candidates {
            let p = d.join(name);
            if is_executable(&p) {
                return Some(SolverSpec::new(name, p));
            }
        }
        None
    }

    /// Runs the binary with `--version` and expects a zero exit.
    pub fn probe(&self) -> Result<String, SolverError> {
        if !is_executable(&self.path) {
            return Err(SolverError::NotFound { name: self.name.clone(), path: self.path.clone() });
        }
        let out = run_process(&self.path, &["--version".to_string()], Duration::from_secs(10));
        match out {
            Ok(o) if !o.timed_out && o.status.is_some_and(|s| s.success()) => {
                Ok(o.stdout.lines().next().unwrap_or("").trim().to_string())
            }
            Ok(o) => Err(SolverError::Probe {
                name: self.name.clone(),
                reason: format!("exit {:?}: {}", o.status, o.stderr.trim()),
            }),
            Err(e) => Err(SolverError::Probe { name: self.name.clone(), reason: e.to_string() }),
        }
    }

    fn command_args(&self, file: &Path) -> Vec<String> {
        self.args.iter().map(|a| a.replace("{file}", &file.to_string_lossy())).collect()
    }
}

fn is_executable(p: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    std::fs::metadata(p).is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
}

/// Captured result of one solver process.
#[derive(Debug, Clone)]
pub struct RawOutput {
    pub stdout: String,
    pub stderr: String,
    pub status: Option<ExitStatus>,
    pub timed_out: bool,
    pub elapsed: Duration,
}

fn kill_group(child: &Child) {
    // The child leads its own group; negative pid addresses the group.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
}

fn drain(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `program args` with a wall-clock limit, reaping it (and its process
/// group) in every case.
pub fn run_process(program: &Path, args: &[String], timeout: Duration) -> std::io::Result<RawOutput> {
    let start = Instant::now();
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()?;
    let out = drain(child.stdout.take().expect("piped"));
    let err = drain(child.stderr.take().expect("piped"));
    let mut pause = Duration::from_micros(200);
    let (status, timed_out) = loop {
        if let Some(s) = child.try_wait()? {
            break (Some(s), false);
        }
        if start.elapsed() >= timeout {
            kill_group(&child);
            let s = child.wait()?;
            break (Some(s), true);
        }
        thread::sleep(pause.min(timeout.saturating_sub(start.elapsed())));
        pause = (pause * 2).min(Duration::from_millis(2));
    };
    // Descendants may still hold the pipes open.
    kill_group(&child);
    let elapsed = start.elapsed();
    Ok(RawOutput {
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        status,
        timed_out,
        elapsed,
    })
}

/// Runs `text` through the solver and returns its raw output.
pub fn run_text(spec: &SolverSpec, text: &str, timeout: Duration) -> std::io::Result<RawOutput> {
    let mut file = tempfile::Builder::new().prefix("qnnv-").suffix(".smt2").tempfile()?;
    file.write_all(text.as_bytes())?;
    file.flush()?;
    run_process(&spec.path, &spec.command_args(file.path()), timeout)
}

/// One verification job.
#[derive(Debug, Clone)]
pub struct Job {
    pub script: Arc<SmtScript>,
    pub spec: SolverSpec,
    pub timeout: Duration,
    pub goal: GoalMode,
    /// When set, solver stdout/stderr are written to `<prefix>.out` and
    /// `<prefix>.err`.
    pub artifacts: Option<PathBuf>,
}

impl Job {
    pub fn new(script: Arc<SmtScript>, spec: SolverSpec, timeout: Duration) -> Job {
        Job { script, spec, timeout, goal: GoalMode::Any, artifacts: None }
    }
}

pub fn run_solver(script: &Arc<SmtScript>, spec: &SolverSpec, timeout: Duration) -> Verdict {
    run_job(&Job::new(script.clone(), spec.clone(), timeout))
}

fn first_answer(stdout: &str) -> Option<&str> {
    stdout.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with(';'))
}

pub fn run_job(job: &Job) -> Verdict {
    let text = job.script.render_goal(job.goal);
    let raw = match run_text(&job.spec, &text, job.timeout) {
        Ok(r) => r,
        Err(e) => {
            return Verdict::new(Status::SolverError, &job.spec.name, Duration::ZERO)
                .with_diagnostics(format!("failed to run {}: {e}", job.spec.path.display()))
        }
    };
    if let Some(prefix) = &job.artifacts {
        let _ = std::fs::write(format!("{}.out", prefix.display()), &raw.stdout);
        let _ = std::fs::write(format!("{}.err", prefix.display()), &raw.stderr);
    }
    if raw.timed_out {
        return Verdict::new(Status::Timeout, &job.spec.name, job.timeout);
    }
    let name = &job.spec.name;
    let diag = || {
        format!(
            "exit {:?}\n--- stdout ---\n{}\n--- stderr ---\n{}",
            raw.status.and_then(|s| s.code()),
            raw.stdout.trim_end(),
            raw.stderr.trim_end()
        )
    };
    match first_answer(&raw.stdout) {
        Some("unsat") => Verdict::new(Status::Safe, name, raw.elapsed),
        Some("unknown") => Verdict::new(Status::Unknown, name, raw.elapsed).with_diagnostics(diag()),
        Some("sat") => {
            let model = raw.stdout.trim_start().strip_prefix("sat").unwrap_or("");
            match decode_model(&job.script, model) {
                Ok(cex) => {
                    let mut v = Verdict::new(Status::Unsafe, name, raw.elapsed);
                    v.counterexample = Some(cex);
                    v
                }
                Err(e) => {
                    Verdict::new(Status::SolverError, name, raw.elapsed).with_diagnostics(format!("{e}\n{}", diag()))
                }
            }
        }
        _ => Verdict::new(Status::SolverError, name, raw.elapsed).with_diagnostics(diag()),
    }
}

/// Runs every job with at most `parallelism` solvers alive at a time.
/// Results are in job order.
pub fn run_batch(jobs: &[Job], parallelism: usize) -> Vec<Verdict> {
    let workers = parallelism.max(1).min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Verdict>>> = Mutex::new(vec![None; jobs.len()]);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let v = run_job(job);
                results.lock().expect("no panics while locked")[i] = Some(v);
            });
        }
    });
    results.into_inner().expect("no panics while locked").into_iter().map(|v| v.expect("every job ran")).collect()
}
