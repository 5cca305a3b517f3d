//! File formats: JSON-lines traces and modification logs, JSON summaries and
//! scenario scripts. Every file is written through a temporary file in the
//! target directory and renamed into place.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use respec_core::modify::ModReport;
use respec_core::runner::{RunOutput, Summary, TraceRecord, SCHEMA_VERSION};
use respec_core::scenario::{builtin_world, ScenarioScript};
use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const MODLOG_FILE: &str = "modlog.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Scenario(#[from] respec_core::scenario::ScenarioError),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fs_err(dir))?;
    tmp.write_all(bytes).map_err(fs_err(path))?;
    tmp.as_file().sync_all().map_err(fs_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Fs {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let f = fs::File::open(path).map_err(fs_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(fs_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(fs_err(path))
}

/// Modification log line.
#[derive(Serialize)]
struct ModLine<'a> {
    v: u32,
    #[serde(flatten)]
    report: &'a ModReport,
}

/// Writes the trace, modification log and summary into `dir`.
pub fn write_run(dir: &Path, trace: &[TraceRecord], modlog: &[ModReport], summary: &Summary) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let lines: Vec<ModLine> = modlog.iter().map(|r| ModLine { v: SCHEMA_VERSION, report: r }).collect();
    write_atomic(&dir.join(TRACE_FILE), &to_jsonl(trace))?;
    write_atomic(&dir.join(MODLOG_FILE), &to_jsonl(&lines))?;
    let mut s = serde_json::to_vec_pretty(summary).expect("summary serializes");
    s.push(b'\n');
    write_atomic(&dir.join(SUMMARY_FILE), &s)
}

pub fn write_output(dir: &Path, out: &RunOutput) -> Result<(), IoError> {
    write_run(dir, &out.trace, &out.modlog, &out.summary)
}

/// A scenario from a JSON file, or a packaged scenario by name when no
/// such file exists.
pub fn load_scenario(arg: &str) -> Result<ScenarioScript, IoError> {
    let path = Path::new(arg);
    if path.exists() {
        let mut s: ScenarioScript = read_json(path)?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        return Ok(s);
    }
    Ok(builtin_world(arg)?)
}

/// Scenario files (`*.json`) in `dir`, by file stem.
pub fn scenario_files(dir: &Path) -> Vec<(String, PathBuf)> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter_map(|p| Some((p.file_stem()?.to_string_lossy().into_owned(), p)))
        .collect();
    out.sort();
    out
}
