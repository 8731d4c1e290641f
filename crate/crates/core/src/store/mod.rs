//! JSONL run files, scenario packets and run accounting.

mod naming;
mod scenarios;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::protocol::{Condition, RunRecord};

pub use naming::{condition_filename, condition_key, python_float_repr};
pub use scenarios::{default_scenarios, load_scenarios, parse_scenarios, ScenarioPacket, ScenarioType};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record for condition {record} cannot be appended to file for {file}")]
    ConditionMismatch { file: String, record: String },
    #[error("{path}:{line}: {message}")]
    MalformedLine { path: PathBuf, line: usize, message: String },
    #[error("bad input pattern {0}")]
    Pattern(String),
    #[error("scenario file: {0}")]
    Scenario(String),
    #[error("serialization: {0}")]
    Serialize(String),
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

/// A per-condition JSONL file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFile {
    pub path: PathBuf,
    pub condition_key: String,
}

impl RunFile {
    pub fn new(path: impl Into<PathBuf>, condition_key: impl Into<String>) -> Self {
        RunFile { path: path.into(), condition_key: condition_key.into() }
    }

    /// `dir/{condition_filename}`.
    pub fn for_condition(dir: &Path, condition: &Condition) -> Self {
        RunFile::new(dir.join(condition_filename(condition)), condition_key(condition))
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    pub fn load(&self, mode: LoadMode) -> Result<LoadReport, StoreError> {
        let mut report = LoadReport::default();
        load_file(&self.path, mode, &mut report)?;
        Ok(report)
    }
}

/// Appends one record as a single line under an exclusive advisory lock.
pub fn append_run(file: &RunFile, record: &RunRecord) -> Result<(), StoreError> {
    if record.condition_key != file.condition_key {
        return Err(StoreError::ConditionMismatch {
            file: file.condition_key.clone(),
            record: record.condition_key.clone(),
        });
    }
    let mut line = serde_json::to_string(record).map_err(|e| StoreError::Serialize(e.to_string()))?;
    line.push('\n');

    if let Some(parent) = file.path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        }
    }
    let mut handle = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&file.path)
        .map_err(|e| StoreError::io(&file.path, e))?;
    handle.lock().map_err(|e| StoreError::io(&file.path, e))?;
    let written = handle.write_all(line.as_bytes()).and_then(|_| handle.sync_data());
    let unlocked = handle.unlock();
    written.map_err(|e| StoreError::io(&file.path, e))?;
    unlocked.map_err(|e| StoreError::io(&file.path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Any malformed line is an error.
    #[default]
    Strict,
    /// Malformed lines become diagnostics and are skipped.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: PathBuf,
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<RunRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub files: Vec<PathBuf>,
}

fn load_file(path: &Path, mode: LoadMode, report: &mut LoadReport) -> Result<(), StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let reader = BufReader::new(file);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(record) => report.records.push(record),
            Err(e) => {
                let diag = Diagnostic { path: path.to_path_buf(), line: i + 1, message: e.to_string() };
                match mode {
                    LoadMode::Strict => {
                        return Err(StoreError::MalformedLine { path: diag.path, line: diag.line, message: diag.message })
                    }
                    LoadMode::Lenient => report.diagnostics.push(diag),
                }
            }
        }
    }
    report.files.push(path.to_path_buf());
    Ok(())
}

/// Expands files, directories (their `*.jsonl` files) and glob patterns.
pub fn resolve_inputs<S: AsRef<str>>(inputs: &[S]) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for input in inputs {
        let input = input.as_ref();
        let path = Path::new(input);
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| StoreError::io(path, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            out.extend(found);
        } else if path.exists() {
            out.push(path.to_path_buf());
        } else if input.contains(['*', '?', '[']) {
            let paths = glob::glob(input).map_err(|e| StoreError::Pattern(format!("{input}: {e}")))?;
            let mut found = Vec::new();
            for p in paths {
                let p = p.map_err(|e| StoreError::io(e.path(), std::io::Error::other(e.to_string())))?;
                if p.is_file() {
                    found.push(p);
                }
            }
            found.sort();
            out.extend(found);
        } else {
            return Err(StoreError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
        }
    }
    out.dedup();
    Ok(out)
}

/// Loads every record from the given files, directories or globs.
pub fn load_runs<S: AsRef<str>>(inputs: &[S], mode: LoadMode) -> Result<LoadReport, StoreError> {
    let mut report = LoadReport::default();
    for path in resolve_inputs(inputs)? {
        load_file(&path, mode, &mut report)?;
    }
    Ok(report)
}

/// Target-versus-realized replicate counts for one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccountingRow {
    #[serde(rename = "Group")]
    pub group: String,
    #[serde(rename = "Condition")]
    pub condition_key: String,
    #[serde(rename = "Target")]
    pub target: u32,
    #[serde(rename = "Realized")]
    pub realized: u32,
    #[serde(rename = "Deficit")]
    pub deficit: i64,
}

/// Reporting group: composition, roles, and any ablation or window variant.
pub fn condition_group(c: &Condition) -> String {
    let mut group = format!(
        "{} / {}",
        if c.composition.is_mixed() { "mixed" } else { "uniform" },
        if c.roles_enabled { "roles" } else { "no roles" }
    );
    if let Some(role) = c.ablation {
        group.push_str(&format!(" / ablate {}", role.name()));
    }
    if c.memory_window != crate::protocol::DEFAULT_MEMORY_WINDOW {
        group.push_str(&format!(" / k={}", c.memory_window));
    }
    group
}

/// Counts non-excluded primary runs per condition. Continuation records are
/// skipped. `targets` overrides each condition's own `target_replicates`
/// (the largest one recorded when runs were scheduled with different targets).
pub fn run_accounting(records: &[RunRecord], targets: &HashMap<String, u32>) -> Vec<AccountingRow> {
    let mut by_key: BTreeMap<&str, (&Condition, u32)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.branch.is_none()) {
        let entry = by_key.entry(r.condition_key.as_str()).or_insert((&r.condition, 0));
        if r.condition.target_replicates > entry.0.target_replicates {
            entry.0 = &r.condition;
        }
        if !r.is_excluded() {
            entry.1 += 1;
        }
    }
    for key in targets.keys() {
        if !by_key.contains_key(key.as_str()) {
            if let Some(r) = records.iter().find(|r| &r.condition_key == key) {
                by_key.insert(key.as_str(), (&r.condition, 0));
            }
        }
    }
    by_key
        .into_iter()
        .map(|(key, (condition, realized))| {
            let target = targets.get(key).copied().unwrap_or(condition.target_replicates);
            AccountingRow {
                group: condition_group(condition),
                condition_key: key.to_string(),
                target,
                realized,
                deficit: target as i64 - realized as i64,
            }
        })
        .collect()
}

pub fn write_accounting_csv<W: Write>(rows: &[AccountingRow], out: W) -> Result<(), StoreError> {
    let mut writer = csv::Writer::from_writer(out);
    if rows.is_empty() {
        writer
            .write_record(["Group", "Condition", "Target", "Realized", "Deficit"])
            .map_err(|e| StoreError::Serialize(e.to_string()))?;
    }
    for row in rows {
        writer.serialize(row).map_err(|e| StoreError::Serialize(e.to_string()))?;
    }
    writer.flush().map_err(|e| StoreError::Serialize(e.to_string()))
}
