//! Replicate bootstrap and round-permutation null for λ̂.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_ensemble, distance, divergence_series, estimate_lyapunov, fit_values, log_slope, AnalysisError,
    CommitteeTrajectory, FitWindow, Point,
};
use crate::seeds::stream;

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    /// One slope per retained resample, in resample order.
    pub slopes: Vec<f64>,
    /// Draws rejected for having fewer than two distinct replicates or a degenerate fit.
    pub redraws: usize,
}

/// Pairwise distance matrices for the window rounds.
fn window_distances(trajectories: &[CommitteeTrajectory], window: FitWindow) -> Vec<Vec<f64>> {
    let r = trajectories.len();
    let start = (window.lo - trajectories[0].first_round) as usize;
    (start..start + window.len())
        .map(|i| {
            let mut m = vec![0.0; r * r];
            for a in 0..r {
                for b in a + 1..r {
                    let d = distance(&trajectories[a].means[i], &trajectories[b].means[i]);
                    m[a * r + b] = d;
                    m[b * r + a] = d;
                }
            }
            m
        })
        .collect()
}

/// Percentile CI from `b` replicate resamples drawn with replacement.
pub fn bootstrap_ci(
    trajectories: &[CommitteeTrajectory],
    b: usize,
    window: FitWindow,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapResult, AnalysisError> {
    if b == 0 {
        return Err(AnalysisError::InvalidArgument("bootstrap resample count must be at least 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(AnalysisError::InvalidArgument(format!("confidence {confidence} outside (0, 1)")));
    }
    let full = divergence_series(trajectories)?;
    estimate_lyapunov(&full, window)?;

    let r = trajectories.len();
    let dist = window_distances(trajectories, window);
    let pairs = (r * (r - 1) / 2) as f64;
    let max_attempts = 10 * b;

    let draws: Vec<Option<(f64, usize)>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let mut idx = vec![0usize; r];
            for attempt in 0..max_attempts {
                for slot in idx.iter_mut() {
                    *slot = rng.gen_range(0..r);
                }
                let first = idx[0];
                if idx.iter().all(|&i| i == first) {
                    continue;
                }
                let values: Vec<f64> = dist
                    .iter()
                    .map(|m| {
                        let mut sum = 0.0;
                        for a in 0..r {
                            for c in a + 1..r {
                                sum += m[idx[a] * r + idx[c]];
                            }
                        }
                        sum / pairs
                    })
                    .collect();
                if let Ok(fit) = fit_values(&values, window) {
                    return Some((fit.slope, attempt));
                }
            }
            None
        })
        .collect();

    let mut slopes = Vec::with_capacity(b);
    let mut redraws = 0;
    for draw in draws {
        let (slope, rejected) = draw.ok_or(AnalysisError::DegenerateEnsemble)?;
        slopes.push(slope);
        redraws += rejected;
    }
    if redraws > max_attempts {
        return Err(AnalysisError::DegenerateEnsemble);
    }
    let mut sorted = slopes.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    Ok(BootstrapResult {
        ci_low: percentile(&sorted, tail),
        ci_high: percentile(&sorted, 1.0 - tail),
        confidence,
        slopes,
        redraws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub observed: f64,
    /// Null slopes at or above the observed slope.
    pub exceedances: usize,
    pub permutations: usize,
}

/// One-sided test of λ̂ against independently shuffled round orders.
pub fn permutation_test(
    trajectories: &[CommitteeTrajectory],
    p: usize,
    window: FitWindow,
    seed: u64,
) -> Result<PermutationResult, AnalysisError> {
    if p == 0 {
        return Err(AnalysisError::InvalidArgument("permutation count must be at least 1".into()));
    }
    let observed = estimate_lyapunov(&divergence_series(trajectories)?, window)?.slope;
    check_ensemble(trajectories)?;

    let len = trajectories[0].len();
    let start = (window.lo - trajectories[0].first_round) as usize;
    let exceedances = (0..p)
        .into_par_iter()
        .filter(|&k| {
            let mut rng = stream(seed, k as u64);
            let orders: Vec<Vec<usize>> = trajectories
                .iter()
                .map(|_| {
                    let mut order: Vec<usize> = (0..len).collect();
                    order.shuffle(&mut rng);
                    order
                })
                .collect();
            let values: Vec<f64> = (start..start + window.len())
                .map(|i| {
                    let points: Vec<Point> =
                        trajectories.iter().zip(&orders).map(|(t, order)| t.means[order[i]]).collect();
                    super::mean_pairwise_distance(&points)
                })
                .collect();
            log_slope(&values, window.lo).0 >= observed
        })
        .count();
    Ok(PermutationResult {
        p_value: (1 + exceedances) as f64 / (p + 1) as f64,
        observed,
        exceedances,
        permutations: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_family(scales: &[f64], rate: f64) -> Vec<CommitteeTrajectory> {
        let dir = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
        scales
            .iter()
            .enumerate()
            .map(|(r, c)| {
                let means = (1..=20)
                    .map(|t| {
                        let s = c * 1e-3 * (rate * t as f64).exp();
                        [1.0 / 3.0 + s * dir[0], 1.0 / 3.0 + s * dir[1], 1.0 / 3.0]
                    })
                    .collect();
                CommitteeTrajectory::new(format!("r{r}"), 1, means)
            })
            .collect()
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!((percentile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((percentile(&v, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn scale_cancels_in_bootstrap() {
        let trajs = exp_family(&[0.3, 0.9, 1.7, 2.4, 3.1], 0.1);
        let res = bootstrap_ci(&trajs, 500, FitWindow::default(), 0.95, 11).unwrap();
        assert_eq!(res.slopes.len(), 500);
        assert!((res.ci_low - 0.1).abs() < 1e-9 && (res.ci_high - 0.1).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_independent_of_threads() {
        let trajs = exp_family(&[0.3, 0.9, 1.7, 2.4, 3.1], 0.1);
        let a = bootstrap_ci(&trajs, 64, FitWindow::default(), 0.95, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| bootstrap_ci(&trajs, 64, FitWindow::default(), 0.95, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_rejects_zero_count() {
        let trajs = exp_family(&[0.3, 0.9, 1.7], 0.2);
        assert!(matches!(permutation_test(&trajs, 0, FitWindow::default(), 1), Err(AnalysisError::InvalidArgument(_))));
        let res = permutation_test(&trajs, 199, FitWindow::default(), 1).unwrap();
        assert!(res.p_value > 0.0 && res.p_value <= 1.0);
    }

    #[test]
    fn coincident_ensemble_is_degenerate() {
        let trajs = exp_family(&[1.0, 1.0, 1.0], 0.1);
        assert_eq!(
            bootstrap_ci(&trajs, 10, FitWindow::default(), 0.95, 1).unwrap_err(),
            AnalysisError::DegenerateEnsemble
        );
        assert_eq!(
            permutation_test(&trajs, 10, FitWindow::default(), 1).unwrap_err(),
            AnalysisError::DegenerateEnsemble
        );
    }
}
