//! Branching-entropy certificate from K continuations of a base state.

use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use super::{committee_mean, divergence_series, mean_pairwise_distance, AnalysisError, CommitteeTrajectory, Point};
use crate::protocol::RunRecord;

/// Continuations of one base state. Each trajectory starts at the branch
/// round `t` (the branch-point state) and runs through the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSet {
    pub base_run_id: String,
    pub continuations: Vec<CommitteeTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingCertificate {
    pub base_run_id: String,
    pub branch_round: u32,
    pub horizon: u32,
    pub k: usize,
    /// Mean divergence over rounds t+1..=horizon.
    pub h_k: f64,
    /// Mean pairwise distance among branch-point states.
    pub mu_d: f64,
    pub gamma: f64,
    pub c_in: f64,
    /// `None` with a single base state.
    pub c_out: Option<f64>,
}

fn cosine(a: &Point, b: &Point) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn final_state(t: &CommitteeTrajectory) -> Point {
    *t.means.last().expect("non-empty trajectory")
}

/// Groups continuation records branched at `branch_round` by base run.
///
/// Each trajectory is prefixed with the base run's committee mean at the
/// branch round, so the base records must be among `records`. Excluded
/// continuations are skipped.
pub fn branch_sets(records: &[RunRecord], branch_round: u32) -> Result<Vec<BranchSet>, AnalysisError> {
    let mut grouped: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if let Some(b) = &r.branch {
            if b.branch_round == branch_round && !r.is_excluded() {
                grouped.entry(b.base_run_id.as_str()).or_default().push(r);
            }
        }
    }
    grouped
        .into_iter()
        .map(|(base_id, mut conts)| {
            let base = records
                .iter()
                .find(|r| r.branch.is_none() && r.run_id == base_id)
                .ok_or_else(|| AnalysisError::InvalidArgument(format!("base run {base_id} is not loaded")))?;
            let branch_point = committee_mean(base)?
                .at(branch_round)
                .ok_or(AnalysisError::MismatchedRounds)?;
            conts.sort_by_key(|r| r.branch.as_ref().map(|b| b.branch_index));
            let continuations = conts
                .into_iter()
                .map(|c| {
                    let mut means = vec![branch_point];
                    means.extend(committee_mean(c)?.means);
                    Ok(CommitteeTrajectory::new(c.run_id.clone(), branch_round, means))
                })
                .collect::<Result<Vec<_>, AnalysisError>>()?;
            Ok(BranchSet { base_run_id: base_id.to_string(), continuations })
        })
        .collect()
}

/// Γ̂ = Ĥ_K − μ̂_D per base state, with final-round cosine cohesion.
pub fn branching_certificate(
    sets: &[BranchSet],
    branch_round: u32,
    horizon: u32,
) -> Result<Vec<BranchingCertificate>, AnalysisError> {
    if horizon <= branch_round {
        return Err(AnalysisError::InvalidArgument(format!("horizon {horizon} must exceed branch round {branch_round}")));
    }
    for set in sets {
        if set.continuations.len() < 2 {
            return Err(AnalysisError::TooFewTrajectories { needed: 2, got: set.continuations.len() });
        }
        if set.continuations.iter().any(|c| c.first_round != branch_round || c.last_round() != horizon) {
            return Err(AnalysisError::MismatchedRounds);
        }
    }

    let finals: Vec<Vec<Point>> = sets.iter().map(|s| s.continuations.iter().map(final_state).collect()).collect();

    sets.iter()
        .enumerate()
        .map(|(si, set)| {
            let d = divergence_series(&set.continuations)?;
            let post = &d.values[1..];
            let h_k = post.iter().sum::<f64>() / post.len() as f64;
            let branch_points: Vec<Point> = set.continuations.iter().map(|c| c.means[0]).collect();
            let mu_d = mean_pairwise_distance(&branch_points);

            let own = &finals[si];
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..own.len() {
                for j in i + 1..own.len() {
                    sum += cosine(&own[i], &own[j]);
                    pairs += 1;
                }
            }
            let c_in = sum / pairs as f64;

            let mut out_sum = 0.0;
            let mut out_pairs = 0usize;
            for (sj, other) in finals.iter().enumerate() {
                if sj == si {
                    continue;
                }
                for a in own {
                    for b in other {
                        out_sum += cosine(a, b);
                        out_pairs += 1;
                    }
                }
            }
            let c_out = (out_pairs > 0).then(|| out_sum / out_pairs as f64);

            Ok(BranchingCertificate {
                base_run_id: set.base_run_id.clone(),
                branch_round,
                horizon,
                k: set.continuations.len(),
                h_k,
                mu_d,
                gamma: h_k - mu_d,
                c_in,
                c_out,
            })
        })
        .collect()
}
