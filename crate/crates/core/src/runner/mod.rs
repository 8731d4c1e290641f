//! Matrix expansion, job scheduling, resume and branching experiments.

mod bindings;
mod config;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{run_continuation, run_deliberation, Condition, RunOptions, RunRecord};
use crate::seeds::hashed_seed;
use crate::state_codec::ParserOptions;
use crate::store::{append_run, LoadMode, RunFile, ScenarioPacket, StoreError};

pub use bindings::BackendRegistry;
pub use config::{BackendSpec, BackendTable, CompositionKind, MatrixConfig, Toggle};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
}

/// One replicate to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionJob {
    pub condition: Condition,
    pub condition_key: String,
    pub replicate_index: u32,
    pub seed: u64,
}

impl ConditionJob {
    pub fn new(condition: Condition, replicate_index: u32, master_seed: u64) -> Self {
        let seed = hashed_seed(master_seed, &condition.canonical(), replicate_index as u64);
        ConditionJob { condition_key: condition.key(), condition, replicate_index, seed }
    }

    pub fn run_id(&self) -> String {
        format!("{}__r{:03}", self.condition_key, self.replicate_index)
    }
}

/// Conditions × replicate indices `0..target`, in config order.
pub fn expand_matrix(cfg: &MatrixConfig) -> Result<Vec<ConditionJob>, RunnerError> {
    let mut jobs = Vec::new();
    for condition in cfg.conditions()? {
        for r in 0..cfg.target_replicates {
            jobs.push(ConditionJob::new(condition.clone(), r, cfg.master_seed));
        }
    }
    Ok(jobs)
}

/// Everything a batch needs besides the jobs.
pub struct ExecutionContext<'a> {
    pub registry: &'a BackendRegistry,
    pub scenarios: &'a [ScenarioPacket],
    pub out_dir: &'a Path,
    pub parallelism: usize,
    pub parser: ParserOptions,
    pub master_seed: u64,
    /// Top up conditions whose realized count is below target with fresh
    /// replicate indices past every index already used.
    pub backfill: bool,
    pub cancel: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub attempted: usize,
    pub completed: usize,
    pub excluded: BTreeMap<String, usize>,
    /// Jobs that produced no record (unknown scenario, write failure).
    pub failed: usize,
    /// Jobs whose run id was already on disk.
    pub skipped_existing: usize,
    pub backfilled: usize,
    pub wall_time_s: f64,
    pub errors: Vec<String>,
}

impl Summary {
    pub fn excluded_total(&self) -> usize {
        self.excluded.values().sum()
    }

    pub fn new_runs(&self) -> usize {
        self.completed + self.excluded_total()
    }
}

struct ExistingRuns {
    ids: HashSet<String>,
    max_index: HashMap<String, u32>,
    realized: HashMap<String, u32>,
}

fn scan_existing(out_dir: &Path, keys: &[String]) -> Result<ExistingRuns, RunnerError> {
    let mut existing = ExistingRuns { ids: HashSet::new(), max_index: HashMap::new(), realized: HashMap::new() };
    for key in keys {
        let file = RunFile::new(out_dir.join(format!("{key}.jsonl")), key.clone());
        if !file.exists() {
            continue;
        }
        for r in file.load(LoadMode::Lenient)?.records {
            if r.branch.is_some() {
                continue;
            }
            let max = existing.max_index.entry(key.clone()).or_insert(0);
            *max = (*max).max(r.replicate_index);
            if !r.is_excluded() {
                *existing.realized.entry(key.clone()).or_insert(0) += 1;
            }
            existing.ids.insert(r.run_id);
        }
    }
    Ok(existing)
}

fn run_one(job: &ConditionJob, ctx: &ExecutionContext<'_>) -> Result<RunRecord, String> {
    let scenario = ctx
        .scenarios
        .iter()
        .find(|s| s.id == job.condition.scenario_id)
        .ok_or_else(|| format!("{}: unknown scenario {}", job.run_id(), job.condition.scenario_id))?;
    let backends = ctx.registry.backends_for(&job.condition, job.replicate_index);
    let opts = RunOptions {
        parser: ctx.parser,
        run_id: Some(job.run_id()),
        replicate_index: job.replicate_index,
        cancel: ctx.cancel.clone(),
    };
    let record = run_deliberation(&job.condition, &scenario.prompt_text(), backends, job.seed, &opts)
        .map_err(|e| format!("{}: {e}", job.run_id()))?;
    let file = RunFile::for_condition(ctx.out_dir, &job.condition);
    append_run(&file, &record).map_err(|e| format!("{}: {e}", job.run_id()))?;
    Ok(record)
}

fn run_batch(jobs: &[&ConditionJob], ctx: &ExecutionContext<'_>, summary: &Mutex<Summary>) -> Vec<(String, bool)> {
    let next = AtomicUsize::new(0);
    let outcomes = Mutex::new(Vec::new());
    let workers = ctx.parallelism.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                if ctx.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
                    break;
                }
                let result = run_one(job, ctx);
                let mut s = summary.lock().expect("summary lock");
                s.attempted += 1;
                match result {
                    Ok(record) => {
                        let ok = !record.is_excluded();
                        match &record.excluded {
                            Some(ex) => *s.excluded.entry(ex.reason.as_str().to_string()).or_insert(0) += 1,
                            None => s.completed += 1,
                        }
                        outcomes.lock().expect("outcomes lock").push((job.condition_key.clone(), ok));
                    }
                    Err(e) => {
                        s.failed += 1;
                        s.errors.push(e);
                    }
                }
            });
        }
    });
    outcomes.into_inner().expect("outcomes lock")
}

/// Runs every job not already persisted in `ctx.out_dir`, at most
/// `ctx.parallelism` at a time. Each record is appended as soon as it
/// finishes.
pub fn execute_jobs(jobs: &[ConditionJob], ctx: &ExecutionContext<'_>) -> Result<Summary, RunnerError> {
    let start = Instant::now();
    std::fs::create_dir_all(ctx.out_dir).map_err(|e| RunnerError::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    let mut keys: Vec<String> = jobs.iter().map(|j| j.condition_key.clone()).collect();
    keys.sort();
    keys.dedup();
    let existing = scan_existing(ctx.out_dir, &keys)?;

    let summary = Mutex::new(Summary::default());
    let pending: Vec<&ConditionJob> = jobs.iter().filter(|j| !existing.ids.contains(&j.run_id())).collect();
    summary.lock().expect("summary lock").skipped_existing = jobs.len() - pending.len();
    let outcomes = run_batch(&pending, ctx, &summary);

    if ctx.backfill {
        let mut realized = existing.realized.clone();
        for (key, ok) in &outcomes {
            if *ok {
                *realized.entry(key.clone()).or_insert(0) += 1;
            }
        }
        let mut next_index: HashMap<String, u32> = HashMap::new();
        let mut conditions: BTreeMap<String, &Condition> = BTreeMap::new();
        for j in jobs {
            conditions.entry(j.condition_key.clone()).or_insert(&j.condition);
            let n = next_index.entry(j.condition_key.clone()).or_insert(0);
            *n = (*n).max(j.replicate_index + 1);
        }
        for (key, max) in &existing.max_index {
            if let Some(n) = next_index.get_mut(key) {
                *n = (*n).max(max + 1);
            }
        }
        let mut extra_attempts: HashMap<String, u32> = HashMap::new();
        loop {
            if ctx.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
                break;
            }
            let mut extra = Vec::new();
            for (key, condition) in &conditions {
                let have = realized.get(key).copied().unwrap_or(0);
                let tried = extra_attempts.entry(key.clone()).or_insert(0);
                let target = condition.target_replicates;
                let budget = target.saturating_sub(*tried);
                let deficit = target.saturating_sub(have).min(budget);
                for _ in 0..deficit {
                    let idx = next_index.get_mut(key).expect("known condition");
                    extra.push(ConditionJob::new((*condition).clone(), *idx, ctx.master_seed));
                    *idx += 1;
                    *tried += 1;
                }
            }
            if extra.is_empty() {
                break;
            }
            let refs: Vec<&ConditionJob> = extra.iter().collect();
            summary.lock().expect("summary lock").backfilled += refs.len();
            for (key, ok) in run_batch(&refs, ctx, &summary) {
                if ok {
                    *realized.entry(key).or_insert(0) += 1;
                }
            }
        }
    }

    let mut summary = summary.into_inner().expect("summary lock");
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

/// `k` continuations of `base` from the end of `branch_round`, each with a
/// fresh seed derived from the base seed.
pub fn run_branching(
    base: &RunRecord,
    branch_round: u32,
    k: u32,
    scenario_text: &str,
    registry: &BackendRegistry,
    parser: ParserOptions,
    parallelism: usize,
) -> Result<Vec<RunRecord>, RunnerError> {
    let tag = format!("{}#branch{branch_round}", base.run_id);
    let results: Mutex<Vec<(u32, Result<RunRecord, RunnerError>)>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.max(1).min(k.max(1) as usize) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst) as u32;
                if i >= k {
                    break;
                }
                let backends = registry.backends_for(&base.condition, base.replicate_index);
                let opts = RunOptions { parser, replicate_index: base.replicate_index, ..Default::default() };
                let seed = hashed_seed(base.seed, &tag, i as u64);
                let r = run_continuation(base, branch_round, i, scenario_text, backends, seed, &opts)
                    .map_err(RunnerError::from);
                results.lock().expect("results lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Writes continuations to the base condition's file.
pub fn persist_branches(out_dir: &Path, records: &[RunRecord]) -> Result<PathBuf, RunnerError> {
    let first = records.first().ok_or_else(|| RunnerError::Config("no continuation records".into()))?;
    let file = RunFile::for_condition(out_dir, &first.condition);
    for r in records {
        append_run(&file, r)?;
    }
    Ok(file.path)
}
