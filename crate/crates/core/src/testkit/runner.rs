use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::harness::{CASE_MARKER, ERROR_MARKER, JAVA_HARNESS_CLASS};
use super::{CaseResult, FailureKind, Harness, TestReport, TestkitError};
use crate::model::Language;

pub const DEFAULT_TIMEOUT_SECS: u64 = 10;

/// How to build and run a program for one language. Command arguments may
/// use `{file}` (program file name), `{stem}` (file name without
/// extension) and `{dir}` (working directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolchain {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile_cmd: Option<Vec<String>>,
    pub run_cmd: Vec<String>,
    pub file_name: String,
}

impl Toolchain {
    pub fn default_for(language: Language) -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match language {
            Language::Python => Toolchain {
                compile_cmd: Some(strings(&["python3", "-m", "py_compile", "{file}"])),
                run_cmd: strings(&["python3", "{file}"]),
                file_name: "main.py".into(),
            },
            Language::Java => Toolchain {
                compile_cmd: Some(strings(&["javac", "-nowarn", "{file}"])),
                run_cmd: strings(&["java", "-cp", "{dir}", "{stem}"]),
                file_name: format!("{JAVA_HARNESS_CLASS}.java"),
            },
        }
    }
}

/// Per-language toolchains plus the directory temp work dirs are created in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolchains {
    #[serde(default)]
    pub languages: BTreeMap<Language, Toolchain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_root: Option<PathBuf>,
}

impl Default for Toolchains {
    fn default() -> Self {
        Self {
            languages: Language::ALL.iter().map(|&l| (l, Toolchain::default_for(l))).collect(),
            work_root: None,
        }
    }
}

impl Toolchains {
    pub fn get(&self, language: Language) -> Result<&Toolchain, TestkitError> {
        self.languages
            .get(&language)
            .ok_or_else(|| TestkitError::NoToolchain(language.id().into()))
    }
}

struct StepOutput {
    status_ok: bool,
    timed_out: bool,
    stdout: String,
    stderr: String,
}

fn expand(arg: &str, file: &str, dir: &Path) -> String {
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    arg.replace("{file}", file)
        .replace("{stem}", stem)
        .replace("{dir}", &dir.to_string_lossy())
}

fn run_step(
    cmd: &[String],
    file: &str,
    dir: &Path,
    timeout: Duration,
    language: Language,
) -> Result<StepOutput, TestkitError> {
    let (program, args) = cmd
        .split_first()
        .ok_or_else(|| TestkitError::NoToolchain(language.id().into()))?;
    let program = expand(program, file, dir);
    let mut child = match Command::new(&program)
        .args(args.iter().map(|a| expand(a, file, dir)))
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(child) => child,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(TestkitError::MissingToolchain {
                language: language.id().into(),
                binary: program,
            })
        }
        Err(e) => return Err(e.into()),
    };

    let mut stdout_pipe = child.stdout.take().expect("piped stdout");
    let mut stderr_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr_pipe.read_to_end(&mut buf);
        buf
    });

    let (status_ok, timed_out) = match child.wait_timeout(timeout)? {
        Some(status) => (status.success(), false),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            (false, true)
        }
    };
    let stdout = String::from_utf8_lossy(&out_reader.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    Ok(StepOutput {
        status_ok,
        timed_out,
        stdout,
        stderr,
    })
}

/// Compiles (when the toolchain has a compile step) and runs a harness in a
/// private temporary directory, then judges each case.
///
/// Test failures are reported in the [`TestReport`]; a missing toolchain
/// binary is an error.
pub fn execute(harness: &Harness, toolchains: &Toolchains, timeout: Duration) -> Result<TestReport, TestkitError> {
    let toolchain = toolchains.get(harness.language)?;
    let builder = {
        let mut b = tempfile::Builder::new();
        b.prefix("apirag-run-");
        b
    };
    let workdir = match &toolchains.work_root {
        Some(root) => builder.tempdir_in(root)?,
        None => builder.tempdir()?,
    };
    let dir = workdir.path();
    let file = toolchain.file_name.as_str();
    std::fs::write(dir.join(file), &harness.program)?;
    let started = Instant::now();

    if let Some(compile) = &toolchain.compile_cmd {
        let out = run_step(compile, file, dir, timeout, harness.language)?;
        if out.timed_out {
            return Ok(timed_report(&harness.expected, started, out.stderr));
        }
        if !out.status_ok {
            let msg = if out.stderr.trim().is_empty() {
                out.stdout
            } else {
                out.stderr
            };
            let mut report = TestReport::all_failed(&harness.expected, FailureKind::CompileError, msg.trim());
            report.duration_ms = started.elapsed().as_millis() as u64;
            return Ok(report);
        }
    }

    let out = run_step(&toolchain.run_cmd, file, dir, timeout, harness.language)?;
    let duration_ms = started.elapsed().as_millis() as u64;
    Ok(judge(&harness.expected, &out, duration_ms))
}

fn timed_report(expected: &[String], started: Instant, stderr: String) -> TestReport {
    let mut report = TestReport::all_failed(expected, FailureKind::Timeout, "timed out");
    report.duration_ms = started.elapsed().as_millis() as u64;
    report.stderr = stderr;
    report
}

enum Observed {
    Value(String),
    Error(String),
}

fn parse_markers(stdout: &str) -> BTreeMap<usize, Observed> {
    let mut seen = BTreeMap::new();
    for line in stdout.lines() {
        let (observed, rest) = if let Some(rest) = line.strip_prefix(CASE_MARKER) {
            (true, rest)
        } else if let Some(rest) = line.strip_prefix(ERROR_MARKER) {
            (false, rest)
        } else {
            continue;
        };
        let Some(rest) = rest.strip_prefix(' ') else { continue };
        let (idx, value) = rest.split_once(' ').unwrap_or((rest, ""));
        let Ok(idx) = idx.parse::<usize>() else { continue };
        seen.entry(idx).or_insert_with(|| {
            if observed {
                Observed::Value(value.to_string())
            } else {
                Observed::Error(value.to_string())
            }
        });
    }
    seen
}

fn judge(expected: &[String], out: &StepOutput, duration_ms: u64) -> TestReport {
    let mut observed = parse_markers(&out.stdout);
    let stderr_tail = tail(&out.stderr, 2000);
    let cases = expected
        .iter()
        .enumerate()
        .map(|(index, exp)| {
            let (passed, actual, stderr, kind) = match observed.remove(&index) {
                Some(Observed::Value(v)) => {
                    if v.trim_end() == exp.trim_end() {
                        (true, Some(v), None, None)
                    } else {
                        (false, Some(v), None, Some(FailureKind::WrongOutput))
                    }
                }
                Some(Observed::Error(msg)) => (false, None, Some(msg), Some(FailureKind::RuntimeError)),
                None if out.timed_out => (false, None, None, Some(FailureKind::Timeout)),
                None => (false, None, Some(stderr_tail.clone()), Some(FailureKind::RuntimeError)),
            };
            CaseResult {
                index,
                passed,
                expected: exp.clone(),
                actual,
                stderr,
                failure_kind: kind,
            }
        })
        .collect();
    TestReport::from_cases(cases, duration_ms, out.stderr.clone())
}

fn tail(s: &str, max: usize) -> String {
    let s = s.trim();
    if s.len() <= max {
        return s.to_string();
    }
    let mut start = s.len() - max;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    s[start..].to_string()
}
