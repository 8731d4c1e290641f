//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use committee::analysis::{
    analyze_condition, bootstrap_ci, branching_certificate, divergence_series, estimate_lyapunov, group_by_condition,
    permutation_test, AnalysisOptions, BranchSet, CommitteeTrajectory, FitWindow, RowStatus,
};
use committee::backends::{random_simplex_point, AgentBackend, Script};
use committee::protocol::{
    clerk_aggregate, run_deliberation, Ballot, BackendSet, Composition, Condition, Exclusion, ExclusionReason, Role,
    RunOptions, RunRecord, Task,
};
use committee::runner::{execute_jobs, expand_matrix, BackendRegistry, ExecutionContext, MatrixConfig};
use committee::seeds::stream;
use committee::state_codec::{format_state_line, parse_state_line, FailureKind, Option3, ParserOptions, PreferenceState};
use committee::store::{
    append_run, condition_filename, default_scenarios, load_runs, run_accounting, write_accounting_csv, LoadMode,
    RunFile,
};
use common::{brute_force_divergence, plain_condition, run_with_prefs, state_line, Recorder};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;

type Check = fn() -> (bool, String);

fn main() {
    let criteria: [(&str, Check, u64); 12] = [
        ("divergence oracle equivalence", divergence_oracle, 5),
        ("exact log-linear recovery", exact_recovery, 1),
        ("logistic-map exponent", logistic_map, 30),
        ("contraction check", contraction, 30),
        ("permutation validity", permutation_validity, 300),
        ("bootstrap coverage", bootstrap_coverage, 300),
        ("clerk oracle", clerk_oracle, 1),
        ("parser round-trip", parser_round_trip, 10),
        ("replay determinism", replay_determinism, 30),
        ("branching certificate", branching, 10),
        ("accounting fidelity", accounting, 1),
        ("file naming", file_naming, 1),
    ];
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let in_time = elapsed <= Duration::from_secs(*budget);
        let pass = ok && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {name}: {} ({detail}; {:.2}s of {budget}s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("{} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn random_trajectories(seed: u64, replicates: usize, rounds: usize) -> Vec<CommitteeTrajectory> {
    let mut rng = stream(seed, 0);
    (0..replicates)
        .map(|i| {
            let means = (0..rounds).map(|_| random_simplex_point(&mut rng)).collect();
            CommitteeTrajectory::new(format!("r{i}"), 1, means)
        })
        .collect()
}

/// Replicate `i` sits at `s_i * exp(λt + ε_it)` along one axis.
fn noisy_exponential(seed: u64, replicates: usize, lambda: f64, sigma: f64) -> Vec<CommitteeTrajectory> {
    let mut rng = stream(seed, 1);
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..replicates)
        .map(|i| {
            let s: f64 = rng.gen_range(-1e-3..1e-3);
            let means = (1..=20).map(|t| [s * (lambda * t as f64 + noise.sample(&mut rng)).exp(), 0.0, 0.0]).collect();
            CommitteeTrajectory::new(format!("r{i}"), 1, means)
        })
        .collect()
}

fn divergence_oracle() -> (bool, String) {
    let mut rng = stream(2024, 0);
    let mut worst = 0.0f64;
    for e in 0..100 {
        let r = rng.gen_range(2..=50);
        let trajs = random_trajectories(e, r, 20);
        let d = divergence_series(&trajs).unwrap();
        for i in 0..20 {
            worst = worst.max((d.values[i] - brute_force_divergence(&trajs, i)).abs());
        }
    }
    (worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn exact_recovery() -> (bool, String) {
    let mut worst = 0.0f64;
    for lambda in [-0.1, 0.0, 0.05, 0.7] {
        let trajs: Vec<_> = [0.0, 1.0, 3.0]
            .iter()
            .map(|s| CommitteeTrajectory::new("r", 1, (1..=20).map(|t| [1e-3 * s * (lambda * t as f64).exp(), 0.0, 0.0]).collect()))
            .collect();
        let fit = estimate_lyapunov(&divergence_series(&trajs).unwrap(), FitWindow::default()).unwrap();
        worst = worst.max((fit.slope - lambda).abs());
    }
    (worst <= 1e-12, format!("max |slope - lambda| {worst:.1e}"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_matrix(cfg: &MatrixConfig, out: &Path) -> Vec<RunRecord> {
    let registry = BackendRegistry::from_table(&cfg.backends, cfg.parallelism).unwrap();
    let scenarios = default_scenarios();
    let ctx = ExecutionContext {
        registry: &registry,
        scenarios: &scenarios,
        out_dir: out,
        parallelism: cfg.parallelism,
        parser: ParserOptions::default(),
        master_seed: cfg.master_seed,
        backfill: false,
        cancel: None,
    };
    let summary = execute_jobs(&expand_matrix(cfg).unwrap(), &ctx).unwrap();
    assert_eq!(summary.failed, 0, "{:?}", summary.errors);
    load_runs(&[out.to_str().unwrap()], LoadMode::Strict).unwrap().records
}

fn logistic_map() -> (bool, String) {
    let cfg = MatrixConfig::load(&config_path("logistic.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = run_matrix(&cfg, dir.path());
    let groups = group_by_condition(&records);
    let runs = groups.values().next().unwrap();
    // D(t) leaves the six-decimal resolution floor near round 8 and
    // saturates after round 24.
    let opts = AnalysisOptions { window: FitWindow::new(10, 22).unwrap(), bootstrap: 200, permutations: 1999, ..Default::default() };
    let row = analyze_condition(runs, &opts).unwrap();
    let lambda = row.lambda.unwrap();
    (
        row.status == RowStatus::Ok && runs.len() == 20 && (0.55..=0.80).contains(&lambda),
        format!("lambda {lambda:.4} vs ln 2 = 0.6931, p {:.4}, n {}", row.p_value.unwrap(), row.n),
    )
}

fn contraction() -> (bool, String) {
    let cfg = MatrixConfig::load(&config_path("consensus.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = run_matrix(&cfg, dir.path());
    let opts = AnalysisOptions { bootstrap: 200, ..Default::default() };
    let mut ok = true;
    let mut parts = Vec::new();
    for runs in group_by_condition(&records).values() {
        let row = analyze_condition(runs, &opts).unwrap();
        let (lambda, p) = (row.lambda.unwrap_or(f64::NAN), row.p_value.unwrap_or(f64::NAN));
        ok &= row.status == RowStatus::Ok && runs.len() == 20 && lambda < 0.0 && p > 0.5;
        parts.push(format!("{lambda:.3}/p={p:.3}"));
    }
    ok &= parts.len() == 4;
    (ok, format!("lambda/p per cell {}", parts.join(" ")))
}

fn permutation_validity() -> (bool, String) {
    let w = FitWindow::default();
    let rejections = (0..500u64)
        .filter(|&e| permutation_test(&random_trajectories(50_000 + e, 10, 20), 1999, w, e).unwrap().p_value <= 0.05)
        .count();
    let fpr = rejections as f64 / 500.0;
    let floor = 1.0 / 2000.0;
    let strong = (0..100u64)
        .filter(|&e| {
            let p = permutation_test(&noisy_exponential(70_000 + e, 10, 0.2, 0.05), 1999, w, e).unwrap().p_value;
            (p - floor).abs() < 1e-15
        })
        .count();
    (
        (0.03..=0.07).contains(&fpr) && strong >= 95,
        format!("null false-positive rate {fpr:.3}, strong signal at p=0.0005 in {strong}/100"),
    )
}

fn bootstrap_coverage() -> (bool, String) {
    let covered = (0..200u64)
        .filter(|&e| {
            let ci = bootstrap_ci(&noisy_exponential(90_000 + e, 20, 0.08, 0.3), 500, FitWindow::default(), 0.95, e).unwrap();
            ci.ci_low <= 0.08 && 0.08 <= ci.ci_high
        })
        .count();
    let rate = covered as f64 / 200.0;
    ((0.90..=0.98).contains(&rate), format!("coverage {rate:.3}"))
}

fn clerk_oracle() -> (bool, String) {
    let mut mismatches = 0;
    for code in 0..243usize {
        let votes: Vec<Option3> = (0..5).map(|i| Option3::ALL[code / 3usize.pow(i) % 3]).collect();
        let ballots: Vec<Ballot> = votes
            .iter()
            .enumerate()
            .map(|(i, d)| Ballot { agent_index: i, decision: *d, confidence: 50, repaired: false })
            .collect();
        let got = clerk_aggregate(&ballots);

        let counts: Vec<usize> = Option3::ALL.iter().map(|o| votes.iter().filter(|v| *v == o).count()).collect();
        let top = *counts.iter().max().unwrap();
        let leaders: Vec<usize> = (0..3).filter(|&k| counts[k] == top).collect();
        let want = (Option3::ALL[leaders[0]], top, 5, leaders.len() == 1 && top >= 3, leaders.len() > 1);
        if (got.decision, got.majority_count, got.total, got.strict_majority, got.tie_broken) != want {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("243 ballot combinations, {mismatches} mismatches"))
}

fn parser_round_trip() -> (bool, String) {
    let mut rng = stream(8, 0);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let (a, b): (u32, u32) = (rng.gen_range(0..=1_000_000), rng.gen_range(0..=1_000_000));
        let (lo, hi) = (a.min(b), a.max(b));
        let p = [lo as f64 / 1e6, (hi - lo) as f64 / 1e6, (1_000_000 - hi) as f64 / 1e6];
        let state = PreferenceState::new(p, rng.gen_range(0..=100), ["cost", "due_process"]).unwrap();
        let line = format_state_line(&state);
        let back = parse_state_line(&line);
        let same = back.failure_kind == FailureKind::None
            && back.state.as_ref().is_some_and(|s| format_state_line(s) == line && s.conf() == state.conf());
        if !same {
            mismatches += 1;
        }
    }

    let valid = parse_state_line("argument text...\nSTATE: pref=[0.5,0.3,0.2]; conf=70; tags=[\"cost\",\"fairness\"]");
    let fixtures_ok = valid.state.as_ref().is_some_and(|s| s.pref() == [0.5, 0.3, 0.2] && s.conf() == 70)
        && parse_state_line("I prefer option A strongly.").failure_kind == FailureKind::NoStateLine
        && parse_state_line("STATE: pref=[0.49,0.29,0.20]; conf=80; tags=[\"x\",\"y\"]").state.is_some_and(|s| {
            let p = s.pref();
            (p[0] - 0.5).abs() < 1e-12
                && (p[1] - 0.29 / 0.98).abs() < 1e-12
                && (p[2] - 0.20 / 0.98).abs() < 1e-12
                && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12
        })
        && format_state_line(&PreferenceState::new([1.0, 0.0, 0.0], 100, ["a", "b"]).unwrap())
            == "STATE: pref=[1.000000,0.000000,0.000000]; conf=100; tags=[\"a\",\"b\"]";

    // Seat 2 always answers in prose first and fixes it when asked.
    let c = plain_condition("HL-01", 5, 4);
    let good = Script::constant(format!("Fine.\n{}", state_line([0.5, 0.3, 0.2], 60)), "{\"decision\": \"A\", \"confidence\": 60}");
    let mut bad = good.clone();
    bad.turns = vec!["Prose with no structured line.".into()];
    bad.repairs = (1..=4).map(|r| (r, state_line([0.2, 0.2, 0.6], 40))).collect();
    let recs: Vec<Arc<Recorder>> = (0..5).map(|i| Recorder::new(if i == 2 { bad.clone() } else { good.clone() })).collect();
    let set = BackendSet::new(recs.iter().map(|r| Arc::clone(r) as Arc<dyn AgentBackend>).collect());
    let run = run_deliberation(&c, "t", set, 5, &RunOptions::default()).unwrap();
    let repairs: Vec<usize> =
        recs.iter().map(|r| r.tasks().iter().filter(|t| matches!(t, Task::Repair { .. })).count()).collect();
    let repaired_turns = run.turns.iter().filter(|t| t.parse.repaired).count();
    let repair_ok = !run.is_excluded() && repairs == [0, 0, 4, 0, 0] && repaired_turns == 4;

    (
        mismatches == 0 && fixtures_ok && repair_ok,
        format!("{mismatches} round-trip mismatches in 10000, fixtures ok: {fixtures_ok}, repairs per seat {repairs:?}"),
    )
}

const REPLAY_CONFIG: &str = r#"
scenarios = ["IM-01"]
roles = ["on", "off"]
compositions = ["uniform", "mixed"]
target_replicates = 5
rounds = 6
master_seed = 11
parallelism = PAR

[backends.default]
kind = "scripted"

[backends.default.script]
turns = [
  "Open borders grow the economy.\nSTATE: pref=[0.6,0.3,0.1]; conf=70; tags=[\"growth\",\"labor\"]",
  "Security screening comes first.\nSTATE: pref=[0.2,0.3,0.5]; conf=65; tags=[\"security\",\"order\"]",
  "A points system balances both.\nSTATE: pref=[0.3,0.5,0.2]; conf=60; tags=[\"balance\",\"skills\"]",
]
cycle = true
ballot = "{\"decision\": \"B\", \"confidence\": 60}"
"#;

fn replay_determinism() -> (bool, String) {
    let stamps = Regex::new(r#""timestamps":\{[^}]*\}"#).unwrap();
    let files = |dir: &Path| -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let path = e.unwrap().path();
                let text = fs::read_to_string(&path).unwrap();
                (path.file_name().unwrap().to_string_lossy().into_owned(), stamps.replace_all(&text, "").into_owned())
            })
            .collect();
        out.sort();
        out
    };
    let sequential = MatrixConfig::from_toml(&REPLAY_CONFIG.replace("PAR", "1")).unwrap();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let recs = run_matrix(&sequential, a.path());
    run_matrix(&sequential, b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let identical = fa.len() == 4 && fa == fb;

    // Worker interleaving only changes line order.
    run_matrix(&MatrixConfig::from_toml(&REPLAY_CONFIG.replace("PAR", "4")).unwrap(), c.path());
    let sorted = |files: Vec<(String, String)>| -> Vec<Vec<String>> {
        files
            .into_iter()
            .map(|(_, text)| {
                let mut lines: Vec<String> = text.lines().map(String::from).collect();
                lines.sort();
                lines
            })
            .collect()
    };
    let parallel_same = sorted(fa.clone()) == sorted(files(c.path()));
    (
        identical && parallel_same && recs.len() == 20,
        format!("{} files, {} records, sequential identical: {identical}, parallel same set: {parallel_same}", fa.len(), recs.len()),
    )
}

fn along_line(id: &str, first: u32, offsets: impl Iterator<Item = f64>) -> CommitteeTrajectory {
    let s = 1.0 / 2f64.sqrt();
    CommitteeTrajectory::new(id, first, offsets.map(|o| [1.0 / 3.0 + o * s, 1.0 / 3.0 - o * s, 1.0 / 3.0]).collect())
}

fn branching() -> (bool, String) {
    let (t, horizon) = (5u32, 20u32);
    let mut rng = stream(4, 0);
    let path: Vec<[f64; 3]> = (t..=horizon).map(|_| random_simplex_point(&mut rng)).collect();
    let coincident = BranchSet {
        base_run_id: "base".into(),
        continuations: (0..4).map(|k| CommitteeTrajectory::new(format!("k{k}"), t, path.clone())).collect(),
    };
    let g0 = branching_certificate(&[coincident], t, horizon).unwrap()[0].gamma;

    let c = 0.01;
    let half = c * 3f64.sqrt() / 2.0;
    let separating = BranchSet {
        base_run_id: "base".into(),
        continuations: [1.0, -1.0]
            .iter()
            .map(|sign| along_line("k", t, (t..=horizon).map(|r| sign * half * (r - t) as f64)))
            .collect(),
    };
    let hand = c * 3f64.sqrt() * (horizon - t + 1) as f64 / 2.0;
    let g1 = branching_certificate(&[separating], t, horizon).unwrap()[0].gamma;

    let cluster = |id: &str, vertex: [f64; 3]| BranchSet {
        base_run_id: id.into(),
        continuations: (0..3).map(|k| CommitteeTrajectory::new(format!("{id}{k}"), t, vec![vertex; 16])).collect(),
    };
    let certs = branching_certificate(&[cluster("a", [1.0, 0.0, 0.0]), cluster("b", [0.0, 1.0, 0.0])], t, horizon).unwrap();
    let cohesion_ok = certs.iter().all(|x| (x.c_in - 1.0).abs() <= 1e-9 && x.c_out.is_some_and(|o| o.abs() <= 1e-9));

    (
        g0 == 0.0 && (g1 - hand).abs() <= 1e-9 && cohesion_ok,
        format!("coincident gamma {g0}, separating gamma {g1:.9} vs hand {hand:.9}, two-cluster c_in=1 c_out=0: {cohesion_ok}"),
    )
}

fn accounting() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let prefs = vec![vec![[0.5, 0.3, 0.2]; 2]; 5];
    let write = |condition: &Condition, count: u32, excluded: &[u32]| {
        let file = RunFile::for_condition(dir.path(), condition);
        for r in 0..count {
            let mut rec = run_with_prefs(condition, &prefs, &["A"; 5], r);
            if excluded.contains(&r) {
                rec.excluded = Some(Exclusion {
                    reason: ExclusionReason::ParseFailure,
                    round: Some(2),
                    agent_index: Some(3),
                    detail: "fixture".into(),
                });
            }
            append_run(&file, &rec).unwrap();
        }
    };
    let mut hl = Condition::new("HL-01", 0.0, true, Composition::uniform());
    hl.rounds = 2;
    write(&hl, 20, &[13]);
    let mut im = Condition::new("IM-01", 0.0, true, Composition::mixed_lineup());
    im.rounds = 2;
    write(&im, 20, &[]);
    let mut ab = Condition::new("IM-01", 0.0, true, Composition::uniform());
    ab.rounds = 2;
    ab.ablation = Some(Role::Chair);
    write(&ab, 18, &[0, 4, 9]);

    let records = load_runs(&[dir.path().to_str().unwrap()], LoadMode::Strict).unwrap().records;
    let rows = run_accounting(&records, &HashMap::new());
    let mut out = Vec::new();
    write_accounting_csv(&rows, &mut out).unwrap();
    let got = String::from_utf8(out).unwrap();
    let want = "Group,Condition,Target,Realized,Deficit\n\
                uniform / roles,HL-01__T0.0__N5__rolesTrue,20,19,1\n\
                uniform / roles / ablate Chair,IM-01__T0.0__N5__rolesTrue__ablate-Chair,20,15,5\n\
                mixed / roles,IM-01__T0.0__N5__rolesTrue__multimodel,20,20,0\n";
    (got == want, format!("{} rows, csv matches fixture: {}", rows.len(), got == want))
}

fn file_naming() -> (bool, String) {
    let plain = Condition::new("HL-01", 0.0, false, Composition::uniform());
    let mixed = Condition::new("IM-01", 0.0, true, Composition::mixed_lineup());
    let mut ablated = Condition::new("IM-01", 0.0, true, Composition::uniform());
    ablated.ablation = Some(Role::Chair);
    let got = [condition_filename(&plain), condition_filename(&mixed), condition_filename(&ablated)];
    let want = [
        "HL-01__T0.0__N5__rolesFalse.jsonl",
        "IM-01__T0.0__N5__rolesTrue__multimodel.jsonl",
        "IM-01__T0.0__N5__rolesTrue__ablate-Chair.jsonl",
    ];
    (got == want, got.join(", "))
}
