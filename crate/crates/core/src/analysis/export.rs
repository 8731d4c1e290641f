//! Per-condition tables and plot-ready series.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    bootstrap_ci, committee_mean, divergence_series, estimate_lyapunov, flip_rate, percentile, permutation_test,
    switch_counts, time_to_majority, AnalysisError, CommitteeTrajectory, DivergenceSeries, FitWindow, Welford,
};
use crate::protocol::RunRecord;
use crate::seeds::hashed_seed;
use crate::state_codec::Option3;
use crate::store::condition_group;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub window: FitWindow,
    pub bootstrap: usize,
    pub permutations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { window: FitWindow::default(), bootstrap: 500, permutations: 2000, confidence: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Skipped,
    Degenerate,
}

/// One row of the condition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition_key: String,
    pub scenario_id: String,
    pub group: String,
    pub status: RowStatus,
    pub lambda: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub flip_rate: Option<f64>,
    pub modal_decision: Option<Option3>,
    pub median_ttm: Option<f64>,
    /// Non-excluded primary runs.
    pub n: usize,
    pub note: String,
}

/// Primary (non-continuation) records grouped by condition key, each
/// group ordered by replicate index.
pub fn group_by_condition(records: &[RunRecord]) -> BTreeMap<String, Vec<&RunRecord>> {
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.branch.is_none()) {
        groups.entry(r.condition_key.clone()).or_default().push(r);
    }
    for runs in groups.values_mut() {
        runs.sort_by(|a, b| a.replicate_index.cmp(&b.replicate_index).then_with(|| a.run_id.cmp(&b.run_id)));
    }
    groups
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(percentile(values, 0.5))
}

fn trajectories(runs: &[&RunRecord]) -> Result<Vec<CommitteeTrajectory>, AnalysisError> {
    runs.iter().filter(|r| !r.is_excluded()).map(|r| committee_mean(r)).collect()
}

/// Analyzes the runs of a single condition.
pub fn analyze_condition(runs: &[&RunRecord], opts: &AnalysisOptions) -> Result<ConditionRow, AnalysisError> {
    let first = runs.first().ok_or(AnalysisError::Empty)?;
    let key = first.condition_key.clone();
    let kept: Vec<&RunRecord> = runs.iter().copied().filter(|r| !r.is_excluded()).collect();
    let mut row = ConditionRow {
        condition_key: key.clone(),
        scenario_id: first.condition.scenario_id.clone(),
        group: condition_group(&first.condition),
        status: RowStatus::Skipped,
        lambda: None,
        ci_low: None,
        ci_high: None,
        p_value: None,
        flip_rate: None,
        modal_decision: None,
        median_ttm: None,
        n: kept.len(),
        note: String::new(),
    };
    if let Ok(flip) = flip_rate(kept.iter().copied()) {
        row.flip_rate = Some(flip.rate);
        row.modal_decision = Some(flip.modal);
    }
    let rounds = first.condition.rounds;
    let mut ttms = kept
        .iter()
        .map(|r| time_to_majority(r, None).map(|t| t.ttm.plot_value(rounds) as f64))
        .collect::<Result<Vec<_>, _>>()?;
    row.median_ttm = median(&mut ttms);

    if kept.len() < 2 {
        row.note = format!("fewer than 2 non-excluded runs ({})", kept.len());
        return Ok(row);
    }
    let trajs = trajectories(&kept)?;
    let fit = match divergence_series(&trajs).and_then(|d| estimate_lyapunov(&d, opts.window)) {
        Ok(fit) => fit,
        Err(AnalysisError::DegenerateEnsemble) => {
            row.status = RowStatus::Degenerate;
            row.note = AnalysisError::DegenerateEnsemble.to_string();
            return Ok(row);
        }
        Err(e @ (AnalysisError::WindowOutOfRange { .. } | AnalysisError::MismatchedRounds)) => {
            row.note = e.to_string();
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    row.lambda = Some(fit.slope);
    let boot = bootstrap_ci(&trajs, opts.bootstrap, opts.window, opts.confidence, hashed_seed(opts.seed, &key, 0))?;
    row.ci_low = Some(boot.ci_low);
    row.ci_high = Some(boot.ci_high);
    let perm = permutation_test(&trajs, opts.permutations, opts.window, hashed_seed(opts.seed, &key, 1))?;
    row.p_value = Some(perm.p_value);
    row.status = RowStatus::Ok;
    Ok(row)
}

/// One row per condition, sorted by condition key.
pub fn analyze_records(records: &[RunRecord], opts: &AnalysisOptions) -> Result<Vec<ConditionRow>, AnalysisError> {
    group_by_condition(records).values().map(|runs| analyze_condition(runs, opts)).collect()
}

/// Scenario × condition matrix of λ̂ with realized n per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub scenarios: Vec<String>,
    /// Condition key with the scenario prefix removed.
    pub columns: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, (Option<f64>, usize)>>,
}

fn column_label(row: &ConditionRow) -> String {
    row.condition_key
        .strip_prefix(&format!("{}__", row.scenario_id))
        .unwrap_or(&row.condition_key)
        .to_string()
}

pub fn landscape(rows: &[ConditionRow]) -> Landscape {
    let scenarios: BTreeSet<String> = rows.iter().map(|r| r.scenario_id.clone()).collect();
    let columns: BTreeSet<String> = rows.iter().map(column_label).collect();
    let mut cells: BTreeMap<String, BTreeMap<String, (Option<f64>, usize)>> = BTreeMap::new();
    for row in rows {
        cells.entry(row.scenario_id.clone()).or_default().insert(column_label(row), (row.lambda, row.n));
    }
    Landscape { scenarios: scenarios.into_iter().collect(), columns: columns.into_iter().collect(), cells }
}

impl Landscape {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["scenario".to_string()];
        for c in &self.columns {
            header.push(c.clone());
            header.push(format!("{c} n"));
        }
        w.write_record(&header)?;
        for s in &self.scenarios {
            let mut record = vec![s.clone()];
            for c in &self.columns {
                match self.cells.get(s).and_then(|m| m.get(c)) {
                    Some((lambda, n)) => {
                        record.push(lambda.map(|l| l.to_string()).unwrap_or_default());
                        record.push(n.to_string());
                    }
                    None => {
                        record.push(String::new());
                        record.push(String::new());
                    }
                }
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub condition_key: String,
    pub t: u32,
    pub d: f64,
    /// Empty where D(t) = 0.
    pub log_d: Option<f64>,
}

pub fn divergence_rows(condition_key: &str, series: &DivergenceSeries) -> Vec<DivergenceRow> {
    series
        .rounds()
        .map(|(t, d)| DivergenceRow {
            condition_key: condition_key.to_string(),
            t,
            d,
            log_d: (d > 0.0).then(|| d.ln()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtmCdfPoint {
    pub condition_key: String,
    /// Round, with `rounds + 1` standing for Never.
    pub x: u32,
    pub count: usize,
    pub cdf: f64,
}

/// Empirical CDF of time-to-majority at every x in 1..=rounds+1.
pub fn ttm_cdf(runs: &[&RunRecord]) -> Result<Vec<TtmCdfPoint>, AnalysisError> {
    let kept: Vec<&RunRecord> = runs.iter().copied().filter(|r| !r.is_excluded()).collect();
    let Some(first) = kept.first() else {
        return Ok(Vec::new());
    };
    let rounds = first.condition.rounds;
    let values = kept
        .iter()
        .map(|r| time_to_majority(r, None).map(|t| t.ttm.plot_value(rounds)))
        .collect::<Result<Vec<_>, _>>()?;
    let total = values.len() as f64;
    Ok((1..=rounds + 1)
        .map(|x| {
            let count = values.iter().filter(|&&v| v == x).count();
            let at_or_below = values.iter().filter(|&&v| v <= x).count();
            TtmCdfPoint { condition_key: first.condition_key.clone(), x, count, cdf: at_or_below as f64 / total }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSummaryRow {
    pub condition_key: String,
    pub agent_runs: u64,
    pub mean: f64,
    pub sd: f64,
}

pub fn switch_summary_rows(groups: &BTreeMap<String, Vec<&RunRecord>>) -> Result<Vec<SwitchSummaryRow>, AnalysisError> {
    let mut rows = Vec::new();
    for (key, runs) in groups {
        let mut w = Welford::new();
        for run in runs.iter().filter(|r| !r.is_excluded()) {
            w.extend(switch_counts(run)?.into_iter().map(f64::from));
        }
        if w.count() > 0 {
            rows.push(SwitchSummaryRow { condition_key: key.clone(), agent_runs: w.count(), mean: w.mean(), sd: w.sd() });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
