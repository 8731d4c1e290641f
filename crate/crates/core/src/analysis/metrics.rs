//! Flip rate, time-to-majority and preference switches.

use serde::{Deserialize, Serialize};

use super::{states_by_round, AnalysisError};
use crate::protocol::RunRecord;
use crate::state_codec::Option3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRate {
    pub rate: f64,
    pub modal: Option3,
    /// Several decisions shared the top count; the earliest option won.
    pub modal_tie: bool,
    pub runs: usize,
}

/// Fraction of non-excluded runs whose clerk decision differs from the modal one.
pub fn flip_rate<'a>(runs: impl IntoIterator<Item = &'a RunRecord>) -> Result<FlipRate, AnalysisError> {
    let decisions: Vec<Option3> =
        runs.into_iter().filter(|r| !r.is_excluded()).filter_map(RunRecord::decision).collect();
    if decisions.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut counts = [0usize; 3];
    for d in &decisions {
        counts[d.index()] += 1;
    }
    let (modal, modal_tie) = Option3::argmax(counts.map(|c| c as f64));
    let flips = decisions.len() - counts[modal.index()];
    Ok(FlipRate { rate: flips as f64 / decisions.len() as f64, modal, modal_tie, runs: decisions.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ttm {
    Round(u32),
    Never,
}

impl Ttm {
    /// Plot coordinate: `Never` sits one past the last round.
    pub fn plot_value(self, rounds: u32) -> u32 {
        match self {
            Ttm::Round(t) => t,
            Ttm::Never => rounds + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtmResult {
    pub ttm: Ttm,
    /// Some agent's top option was decided by tie-break along the way.
    pub argmax_tie: bool,
}

/// First round in which at least `threshold` agents share a top option.
/// The default threshold is a strict majority, ⌈(N+1)/2⌉.
pub fn time_to_majority(run: &RunRecord, threshold: Option<usize>) -> Result<TtmResult, AnalysisError> {
    let n = run.condition.committee_size;
    let threshold = threshold.unwrap_or(n / 2 + 1);
    let rounds = states_by_round(run)?;
    let mut argmax_tie = false;
    for (i, seats) in rounds.iter().enumerate() {
        let mut counts = [0usize; 3];
        for p in seats {
            let (top, tied) = Option3::argmax(*p);
            argmax_tie |= tied;
            counts[top.index()] += 1;
        }
        if counts.iter().any(|&c| c >= threshold) {
            return Ok(TtmResult { ttm: Ttm::Round(run.first_round() + i as u32), argmax_tie });
        }
    }
    Ok(TtmResult { ttm: Ttm::Never, argmax_tie })
}

/// Per seat, the number of rounds whose top option differs from the previous round's.
pub fn switch_counts(run: &RunRecord) -> Result<Vec<u32>, AnalysisError> {
    let rounds = states_by_round(run)?;
    let mut counts = vec![0u32; run.condition.committee_size];
    for pair in rounds.windows(2) {
        for (agent, count) in counts.iter_mut().enumerate() {
            if Option3::argmax(pair[0][agent]).0 != Option3::argmax(pair[1][agent]).0 {
                *count += 1;
            }
        }
    }
    Ok(counts)
}

/// Streaming mean and sample variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample (n − 1) standard deviation; zero below two observations.
    pub fn sd(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

impl Extend<f64> for Welford {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}
