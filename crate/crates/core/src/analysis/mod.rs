//! Trajectories, divergence, exponent fits and group metrics.

mod branching;
mod export;
mod inference;
mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::RunRecord;

pub use branching::{branch_sets, branching_certificate, BranchSet, BranchingCertificate};
pub use export::{
    analyze_condition, analyze_records, divergence_rows, group_by_condition, landscape, switch_summary_rows, ttm_cdf,
    write_csv, AnalysisOptions, ConditionRow, DivergenceRow, Landscape, RowStatus, SwitchSummaryRow, TtmCdfPoint,
};
pub use inference::{bootstrap_ci, percentile, permutation_test, BootstrapResult, PermutationResult};
pub use metrics::{flip_rate, switch_counts, time_to_majority, FlipRate, Ttm, TtmResult, Welford};

/// Point on the probability simplex over options A, B, C.
pub type Point = [f64; 3];

/// D(t) values at or below this are floored before taking logs.
pub const DIVERGENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("run {0} is excluded")]
    ExcludedRun(String),
    #[error("run {run}: no parsed state for agent {agent} in round {round}")]
    MissingState { run: String, round: u32, agent: usize },
    #[error("need at least {needed} trajectories, got {got}")]
    TooFewTrajectories { needed: usize, got: usize },
    #[error("trajectories cover different rounds")]
    MismatchedRounds,
    #[error("fit window {lo}:{hi} is outside rounds {first}..={last}")]
    WindowOutOfRange { lo: u32, hi: u32, first: u32, last: u32 },
    #[error("degenerate_ensemble: divergence is zero over most of the fit window")]
    DegenerateEnsemble,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("no runs to analyze")]
    Empty,
}

/// Inclusive round range for the log-slope fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: u32,
    pub hi: u32,
}

impl FitWindow {
    pub fn new(lo: u32, hi: u32) -> Result<Self, AnalysisError> {
        if hi <= lo {
            return Err(AnalysisError::InvalidArgument(format!("fit window {lo}:{hi} needs at least two rounds")));
        }
        Ok(FitWindow { lo, hi })
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { lo: 3, hi: 20 }
    }
}

impl std::str::FromStr for FitWindow {
    type Err = AnalysisError;

    /// `"3:20"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AnalysisError::InvalidArgument(format!("fit window must look like 3:20, got {s:?}"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lo = lo.trim().parse().map_err(|_| bad())?;
        let hi = hi.trim().parse().map_err(|_| bad())?;
        FitWindow::new(lo, hi)
    }
}

impl std::fmt::Display for FitWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

/// Per-round committee-mean preference triple of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeTrajectory {
    pub run_id: String,
    pub first_round: u32,
    pub means: Vec<Point>,
}

impl CommitteeTrajectory {
    pub fn new(run_id: impl Into<String>, first_round: u32, means: Vec<Point>) -> Self {
        CommitteeTrajectory { run_id: run_id.into(), first_round, means }
    }

    pub fn last_round(&self) -> u32 {
        self.first_round + self.means.len() as u32 - 1
    }

    pub fn at(&self, round: u32) -> Option<Point> {
        round.checked_sub(self.first_round).and_then(|i| self.means.get(i as usize)).copied()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

fn states_by_round(run: &RunRecord) -> Result<Vec<Vec<Point>>, AnalysisError> {
    if run.is_excluded() {
        return Err(AnalysisError::ExcludedRun(run.run_id.clone()));
    }
    let n = run.condition.committee_size;
    let first = run.first_round();
    let last = run.condition.rounds;
    let mut rounds = vec![vec![None; n]; (last + 1).saturating_sub(first) as usize];
    for turn in &run.turns {
        if turn.round < first || turn.round > last || turn.agent_index >= n {
            continue;
        }
        if let Some(state) = turn.state() {
            rounds[(turn.round - first) as usize][turn.agent_index] = Some(state.pref());
        }
    }
    rounds
        .into_iter()
        .enumerate()
        .map(|(i, seats)| {
            seats
                .into_iter()
                .enumerate()
                .map(|(agent, p)| {
                    p.ok_or(AnalysisError::MissingState { run: run.run_id.clone(), round: first + i as u32, agent })
                })
                .collect()
        })
        .collect()
}

/// Arithmetic mean of the N preference triples in every round.
pub fn committee_mean(run: &RunRecord) -> Result<CommitteeTrajectory, AnalysisError> {
    let rounds = states_by_round(run)?;
    let means = rounds
        .iter()
        .map(|seats| {
            let mut m = [0.0; 3];
            for p in seats {
                for k in 0..3 {
                    m[k] += p[k];
                }
            }
            m.map(|x| x / seats.len() as f64)
        })
        .collect();
    Ok(CommitteeTrajectory::new(run.run_id.clone(), run.first_round(), means))
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean pairwise Euclidean distance.
pub fn mean_pairwise_distance(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += distance(&points[i], &points[j]);
        }
    }
    sum * 2.0 / (n * (n - 1)) as f64
}

/// D(t) for each covered round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSeries {
    pub first_round: u32,
    pub values: Vec<f64>,
    pub replicates: usize,
}

impl DivergenceSeries {
    pub fn last_round(&self) -> u32 {
        self.first_round + self.values.len() as u32 - 1
    }

    pub fn at(&self, round: u32) -> Option<f64> {
        round.checked_sub(self.first_round).and_then(|i| self.values.get(i as usize)).copied()
    }

    pub fn rounds(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, d)| (self.first_round + i as u32, *d))
    }
}

pub(crate) fn check_ensemble(trajectories: &[CommitteeTrajectory]) -> Result<(), AnalysisError> {
    if trajectories.len() < 2 {
        return Err(AnalysisError::TooFewTrajectories { needed: 2, got: trajectories.len() });
    }
    let first = &trajectories[0];
    if first.is_empty() {
        return Err(AnalysisError::MismatchedRounds);
    }
    if trajectories.iter().any(|t| t.first_round != first.first_round || t.len() != first.len()) {
        return Err(AnalysisError::MismatchedRounds);
    }
    Ok(())
}

pub fn divergence_series(trajectories: &[CommitteeTrajectory]) -> Result<DivergenceSeries, AnalysisError> {
    check_ensemble(trajectories)?;
    let len = trajectories[0].len();
    let values = (0..len)
        .map(|i| {
            let points: Vec<Point> = trajectories.iter().map(|t| t.means[i]).collect();
            mean_pairwise_distance(&points)
        })
        .collect();
    Ok(DivergenceSeries { first_round: trajectories[0].first_round, values, replicates: trajectories.len() })
}

/// OLS fit of ln D(t) on t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: FitWindow,
    /// Window points raised to the floor before the log.
    pub floored: usize,
}

pub(crate) fn window_slice(d: &DivergenceSeries, window: FitWindow) -> Result<&[f64], AnalysisError> {
    if d.values.is_empty() || window.lo < d.first_round || window.hi > d.last_round() {
        return Err(AnalysisError::WindowOutOfRange {
            lo: window.lo,
            hi: window.hi,
            first: d.first_round,
            last: d.last_round(),
        });
    }
    let start = (window.lo - d.first_round) as usize;
    Ok(&d.values[start..start + window.len()])
}

/// Floors, logs and fits; returns (slope, intercept, floored count).
pub(crate) fn log_slope(values: &[f64], lo: u32) -> (f64, f64, usize) {
    let n = values.len() as f64;
    let mut floored = 0;
    let ys: Vec<f64> = values
        .iter()
        .map(|&d| {
            if d < DIVERGENCE_FLOOR {
                floored += 1;
                DIVERGENCE_FLOOR.ln()
            } else {
                d.ln()
            }
        })
        .collect();
    let t_mean = lo as f64 + (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dt = lo as f64 + i as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    (slope, y_mean - slope * t_mean, floored)
}

pub(crate) fn fit_values(values: &[f64], window: FitWindow) -> Result<LyapunovFit, AnalysisError> {
    let (slope, intercept, floored) = log_slope(values, window.lo);
    if floored * 2 > values.len() {
        return Err(AnalysisError::DegenerateEnsemble);
    }
    Ok(LyapunovFit { slope, intercept, window, floored })
}

/// λ̂ as the least-squares slope of ln D(t) over the inclusive window.
pub fn estimate_lyapunov(d: &DivergenceSeries, window: FitWindow) -> Result<LyapunovFit, AnalysisError> {
    fit_values(window_slice(d, window)?, window)
}
