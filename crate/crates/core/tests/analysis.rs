mod common;

use committee::analysis::{
    bootstrap_ci, branching_certificate, committee_mean, divergence_series, estimate_lyapunov, flip_rate,
    permutation_test, switch_counts, time_to_majority, AnalysisError, BranchSet, CommitteeTrajectory, FitWindow,
    Point, Ttm, Welford,
};
use committee::seeds::stream;
use committee::state_codec::Option3;
use common::{brute_force_divergence, line_trajectory, plain_condition, run_with_prefs};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn random_trajectories(seed: u64, replicates: usize, rounds: usize) -> Vec<CommitteeTrajectory> {
    let mut rng = stream(seed, 0);
    (0..replicates)
        .map(|i| {
            let means = (0..rounds).map(|_| committee::backends::random_simplex_point(&mut rng)).collect();
            CommitteeTrajectory::new(format!("r{i}"), 1, means)
        })
        .collect()
}

/// Replicate `i` sits at `s_i * exp(λt + ε_it)` along a fixed line.
fn noisy_exponential(seed: u64, replicates: usize, rounds: u32, lambda: f64, sigma: f64) -> Vec<CommitteeTrajectory> {
    let mut rng = stream(seed, 1);
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..replicates)
        .map(|i| {
            let s: f64 = rng.gen_range(-1e-3..1e-3);
            let offsets: Vec<f64> =
                (1..=rounds).map(|t| s * (lambda * t as f64 + noise.sample(&mut rng)).exp()).collect();
            line_trajectory(&format!("r{i}"), offsets)
        })
        .collect()
}

#[test]
fn divergence_matches_brute_force() {
    let trajs = random_trajectories(3, 7, 12);
    let d = divergence_series(&trajs).unwrap();
    for (i, (t, v)) in d.rounds().enumerate() {
        assert_eq!(t, i as u32 + 1);
        assert!((v - brute_force_divergence(&trajs, i)).abs() < 1e-12);
    }
    assert_eq!(d.replicates, 7);
}

#[test]
fn exact_exponential_recovers_rate_and_intercept() {
    for lambda in [-0.3, 0.0, 0.05, 0.2] {
        let trajs: Vec<_> = [0.0, 1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, s)| line_trajectory(&format!("r{i}"), (1..=20).map(|t| 1e-4 * s * (lambda * t as f64).exp())))
            .collect();
        let fit = estimate_lyapunov(&divergence_series(&trajs).unwrap(), FitWindow::default()).unwrap();
        assert!((fit.slope - lambda).abs() < 1e-10, "{lambda}: {}", fit.slope);
        let d0: f64 = 1e-4 * (1.0 + 3.0 + 2.0) / 3.0;
        assert!((fit.intercept - d0.ln()).abs() < 1e-9);
        assert_eq!(fit.floored, 0);
    }
}

#[test]
fn noisy_slope_is_unbiased() {
    let mut acc = Welford::new();
    for trial in 0..100 {
        let trajs = noisy_exponential(trial, 20, 20, 0.08, 0.05);
        acc.push(estimate_lyapunov(&divergence_series(&trajs).unwrap(), FitWindow::default()).unwrap().slope);
    }
    assert!((0.075..=0.085).contains(&acc.mean()), "mean slope {}", acc.mean());
}

#[test]
fn slope_and_ci_ignore_scale() {
    let base = noisy_exponential(9, 12, 20, 0.1, 0.1);
    let scaled: Vec<_> = base
        .iter()
        .map(|t| {
            let c = 1.0 / 3.0;
            let means = t.means.iter().map(|p| p.map(|x| c + 7.0 * (x - c))).collect();
            CommitteeTrajectory::new(t.run_id.clone(), 1, means)
        })
        .collect();
    let w = FitWindow::default();
    let a = estimate_lyapunov(&divergence_series(&base).unwrap(), w).unwrap();
    let b = estimate_lyapunov(&divergence_series(&scaled).unwrap(), w).unwrap();
    assert!((a.slope - b.slope).abs() < 1e-9);
    assert!((b.intercept - a.intercept - 7f64.ln()).abs() < 1e-9);
    let ca = bootstrap_ci(&base, 200, w, 0.95, 5).unwrap();
    let cb = bootstrap_ci(&scaled, 200, w, 0.95, 5).unwrap();
    assert!((ca.ci_low - cb.ci_low).abs() < 1e-9 && (ca.ci_high - cb.ci_high).abs() < 1e-9);
}

#[test]
fn ci_narrows_with_more_replicates() {
    let widths: Vec<f64> = [5usize, 10, 20, 40]
        .iter()
        .map(|&r| {
            (0..20)
                .map(|s| {
                    let trajs = noisy_exponential(100 + s, r, 20, 0.08, 0.3);
                    let ci = bootstrap_ci(&trajs, 300, FitWindow::default(), 0.95, s).unwrap();
                    ci.ci_high - ci.ci_low
                })
                .sum::<f64>()
                / 20.0
        })
        .collect();
    for pair in widths.windows(2) {
        assert!(pair[1] < pair[0], "{widths:?}");
    }
}

#[test]
fn identical_replicates_are_degenerate() {
    let trajs: Vec<_> = (0..4).map(|i| line_trajectory(&format!("r{i}"), (1..=20).map(|t| 0.01 * t as f64))).collect();
    let d = divergence_series(&trajs).unwrap();
    assert_eq!(estimate_lyapunov(&d, FitWindow::default()), Err(AnalysisError::DegenerateEnsemble));
    assert_eq!(bootstrap_ci(&trajs, 50, FitWindow::default(), 0.95, 1).unwrap_err(), AnalysisError::DegenerateEnsemble);
    assert_eq!(permutation_test(&trajs, 50, FitWindow::default(), 1).unwrap_err(), AnalysisError::DegenerateEnsemble);
}

#[test]
fn window_must_lie_inside_the_series() {
    let trajs = random_trajectories(1, 3, 10);
    let d = divergence_series(&trajs).unwrap();
    assert!(matches!(estimate_lyapunov(&d, FitWindow::default()), Err(AnalysisError::WindowOutOfRange { .. })));
    assert!(FitWindow::new(5, 5).is_err());
    assert_eq!("3:20".parse::<FitWindow>().unwrap(), FitWindow::default());
}

#[test]
fn null_p_values_are_uniform() {
    let mut ps: Vec<f64> = (0..200)
        .map(|e| {
            let trajs = random_trajectories(10_000 + e, 8, 20);
            permutation_test(&trajs, 199, FitWindow::default(), e).unwrap().p_value
        })
        .collect();
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.1, "KS statistic {ks}");
}

#[test]
fn committee_mean_example() {
    let c = plain_condition("HL-01", 3, 2);
    let prefs = vec![
        vec![[1.0, 0.0, 0.0]; 2],
        vec![[0.4, 0.3, 0.3]; 2],
        vec![[0.4, 0.3, 0.3]; 2],
    ];
    let run = run_with_prefs(&c, &prefs, &["A", "A", "A"], 0);
    let m = committee_mean(&run).unwrap();
    assert_eq!(m.first_round, 1);
    assert_eq!(m.len(), 2);
    for k in 0..3 {
        assert!((m.means[0][k] - [0.6, 0.2, 0.2][k]).abs() < 1e-12);
    }
}

#[test]
fn flip_rate_example() {
    let c = plain_condition("HL-01", 3, 2);
    let prefs = vec![vec![[0.4, 0.3, 0.3]; 2]; 3];
    let runs: Vec<_> = (0..10)
        .map(|r| {
            let v = if r < 7 { "A" } else { "B" };
            run_with_prefs(&c, &prefs, &[v, v, "C"], r)
        })
        .collect();
    let f = flip_rate(&runs).unwrap();
    assert!((f.rate - 0.3).abs() < 1e-12);
    assert_eq!((f.modal, f.modal_tie, f.runs), (Option3::A, false, 10));
}

#[test]
fn time_to_majority_and_switches() {
    const A: Point = [0.6, 0.2, 0.2];
    const B: Point = [0.2, 0.6, 0.2];
    const C: Point = [0.2, 0.2, 0.6];
    let c = plain_condition("HL-01", 5, 4);
    // Round 1 tops A B C A B; round 2 reaches three A's.
    let prefs = vec![
        vec![A, A, A, A],
        vec![B, A, B, B],
        vec![C, A, A, C],
        vec![A, B, B, A],
        vec![B, C, C, B],
    ];
    let run = run_with_prefs(&c, &prefs, &["A"; 5], 0);
    let ttm = time_to_majority(&run, None).unwrap();
    assert_eq!(ttm.ttm, Ttm::Round(2));
    assert!(!ttm.argmax_tie);
    assert_eq!(switch_counts(&run).unwrap(), vec![0, 2, 2, 2, 2]);
    assert_eq!(time_to_majority(&run, Some(5)).unwrap().ttm, Ttm::Never);
    assert_eq!(Ttm::Never.plot_value(4), 5);
}

#[test]
fn welford_matches_two_pass() {
    let mut rng = stream(77, 0);
    let xs: Vec<f64> = (0..120).map(|_| rng.gen_range(0..20) as f64).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let mut w = Welford::new();
    w.extend(xs.iter().copied());
    assert_eq!(w.count(), 120);
    assert!((w.mean() - mean).abs() < 1e-12);
    assert!((w.sd() - var.sqrt()).abs() < 1e-12);
}

fn spreading_set(base: &str, branch: u32, horizon: u32, c: f64) -> BranchSet {
    let half = c * 3f64.sqrt() / 2.0;
    let make = |sign: f64, id: &str| {
        let s = 1.0 / 2f64.sqrt();
        let means = (branch..=horizon)
            .map(|r| {
                let o = sign * half * (r - branch) as f64;
                [1.0 / 3.0 + o * s, 1.0 / 3.0 - o * s, 1.0 / 3.0]
            })
            .collect();
        CommitteeTrajectory::new(id, branch, means)
    };
    BranchSet { base_run_id: base.into(), continuations: vec![make(1.0, "a"), make(-1.0, "b")] }
}

#[test]
fn branching_hand_example() {
    let certs = branching_certificate(&[spreading_set("base", 5, 20, 0.01)], 5, 20).unwrap();
    let cert = &certs[0];
    let expected = 0.01 * 3f64.sqrt() * 16.0 / 2.0;
    assert!((cert.h_k - expected).abs() < 1e-12);
    assert!((cert.h_k - 0.138564).abs() < 1e-6);
    assert_eq!(cert.mu_d, 0.0);
    assert_eq!(cert.gamma, cert.h_k);
    assert_eq!(cert.k, 2);
    assert!(cert.c_in < 1.0 && cert.c_in > 0.9);
    assert!(cert.c_out.is_none());
}

#[test]
fn branching_without_spread_has_zero_gamma() {
    let certs = branching_certificate(&[spreading_set("a", 5, 20, 0.0), spreading_set("b", 5, 20, 0.0)], 5, 20).unwrap();
    for cert in certs {
        assert_eq!(cert.gamma, 0.0);
        assert!((cert.c_in - 1.0).abs() < 1e-12);
        assert!((cert.c_out.unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(branching_certificate(&[spreading_set("a", 5, 20, 0.01)], 5, 21).is_err());
    assert!(branching_certificate(&[spreading_set("a", 5, 20, 0.01)], 20, 20).is_err());
}
