mod common;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::sync::{Arc, OnceLock};

use committee::protocol::{Composition, Condition, Exclusion, ExclusionReason, Role, RunRecord};
use committee::store::{
    append_run, condition_filename, load_runs, parse_scenarios, run_accounting, write_accounting_csv, LoadMode,
    RunFile, StoreError,
};
use common::{plain_condition, run_with_prefs};
use proptest::prelude::*;

fn records(n: u32) -> Vec<RunRecord> {
    let c = plain_condition("HL-01", 3, 3);
    let prefs = vec![vec![[0.5, 0.3, 0.2]; 3]; 3];
    (0..n).map(|r| run_with_prefs(&c, &prefs, &["A", "B", "A"], r)).collect()
}

fn cached() -> &'static [RunRecord] {
    static CELL: OnceLock<Vec<RunRecord>> = OnceLock::new();
    CELL.get_or_init(|| records(30))
}

fn exclude(r: &mut RunRecord) {
    r.excluded = Some(Exclusion {
        reason: ExclusionReason::BackendTimeout,
        round: Some(2),
        agent_index: Some(1),
        detail: "timeout".into(),
    });
}

#[test]
fn append_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(5);
    let file = RunFile::for_condition(dir.path(), &recs[0].condition);
    assert!(!file.exists());
    for r in &recs {
        append_run(&file, r).unwrap();
    }
    assert_eq!(file.path.file_name().unwrap(), "HL-01__T0.0__N3__rolesFalse.jsonl");
    let report = file.load(LoadMode::Strict).unwrap();
    assert_eq!(report.records, recs);
    assert!(report.diagnostics.is_empty());
    let text = fs::read_to_string(&file.path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.ends_with('\n'));
}

#[test]
fn concurrent_appends_keep_lines_whole() {
    let dir = tempfile::tempdir().unwrap();
    let recs = Arc::new(records(80));
    let file = Arc::new(RunFile::for_condition(dir.path(), &recs[0].condition));
    std::thread::scope(|s| {
        for w in 0..8 {
            let (recs, file) = (Arc::clone(&recs), Arc::clone(&file));
            s.spawn(move || {
                for r in recs.iter().skip(w).step_by(8) {
                    append_run(&file, r).unwrap();
                }
            });
        }
    });
    let loaded = file.load(LoadMode::Strict).unwrap().records;
    assert_eq!(loaded.len(), 80);
    let ids: HashSet<&str> = loaded.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids.len(), 80);
}

#[test]
fn mismatched_condition_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(1);
    let other = Condition::new("IM-01", 0.0, true, Composition::uniform());
    let file = RunFile::for_condition(dir.path(), &other);
    assert!(matches!(append_run(&file, &recs[0]), Err(StoreError::ConditionMismatch { .. })));
    assert!(!file.exists());
}

#[test]
fn truncated_line_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(20);
    let file = RunFile::for_condition(dir.path(), &recs[0].condition);
    for r in &recs {
        append_run(&file, r).unwrap();
    }
    let text = fs::read_to_string(&file.path).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 6 { l[..l.len() / 2].to_string() } else { l.to_string() })
        .collect();
    fs::write(&file.path, lines.join("\n") + "\n").unwrap();

    let path = file.path.to_str().unwrap();
    let lenient = load_runs(&[path], LoadMode::Lenient).unwrap();
    assert_eq!(lenient.records.len(), 19);
    assert_eq!(lenient.diagnostics.len(), 1);
    assert_eq!(lenient.diagnostics[0].line, 7);
    assert!(lenient.records.iter().all(|r| r.replicate_index != 6));

    match load_runs(&[path], LoadMode::Strict) {
        Err(StoreError::MalformedLine { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected a malformed line error, got {other:?}"),
    }
}

#[test]
fn directories_and_globs_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(2);
    append_run(&RunFile::for_condition(dir.path(), &recs[0].condition), &recs[0]).unwrap();
    let mut other = recs[1].clone();
    other.condition.memory_window = 3;
    other.condition_key = committee::store::condition_key(&other.condition);
    append_run(&RunFile::for_condition(dir.path(), &other.condition), &other).unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let d = dir.path().to_str().unwrap();
    assert_eq!(load_runs(&[d], LoadMode::Strict).unwrap().records.len(), 2);
    let pattern = format!("{d}/*__k3.jsonl");
    let report = load_runs(&[pattern.as_str()], LoadMode::Strict).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.files.len(), 1);
    assert!(load_runs(&[format!("{d}/missing.jsonl")], LoadMode::Strict).is_err());
}

#[test]
fn accounting_examples() {
    let mut recs = records(21);
    exclude(&mut recs[3]);
    exclude(&mut recs[11]);
    let rows = run_accounting(&recs, &HashMap::new());
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].target, rows[0].realized, rows[0].deficit), (20, 19, 1));
    assert_eq!(rows[0].group, "uniform / no roles");

    let full = records(20);
    let row = &run_accounting(&full, &HashMap::new())[0];
    assert_eq!((row.target, row.realized, row.deficit), (20, 20, 0));

    let mut out = Vec::new();
    write_accounting_csv(&rows, &mut out).unwrap();
    let csv = String::from_utf8(out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "Group,Condition,Target,Realized,Deficit");
    assert_eq!(csv.lines().nth(1).unwrap(), "uniform / no roles,HL-01__T0.0__N3__rolesFalse,20,19,1");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn deficit_is_target_minus_realized(mask in proptest::collection::vec(any::<bool>(), 30), target in 0u32..40) {
        let mut recs = cached().to_vec();
        for (r, ex) in recs.iter_mut().zip(&mask) {
            if *ex {
                exclude(r);
            }
        }
        let key = recs[0].condition_key.clone();
        let rows = run_accounting(&recs, &HashMap::from([(key, target)]));
        let realized = mask.iter().filter(|e| !**e).count() as u32;
        prop_assert_eq!(rows[0].realized, realized);
        prop_assert_eq!(rows[0].deficit, target as i64 - realized as i64);
    }
}

#[test]
fn filenames_are_distinct_across_conditions() {
    let mut seen = HashSet::new();
    for scenario in ["HL-01", "IM-01"] {
        for temp in [0.0, 1e-5, 0.7, 1.0] {
            for roles in [false, true] {
                for mixed in [false, true] {
                    let comp = if mixed { Composition::mixed_lineup() } else { Composition::uniform() };
                    for k in [1, 3, 15] {
                        let ablations: &[Option<Role>] =
                            if roles { &[None, Some(Role::Chair), Some(Role::Security)] } else { &[None] };
                        for ab in ablations {
                            let mut c = Condition::new(scenario, temp, roles, comp.clone());
                            c.memory_window = k;
                            c.ablation = *ab;
                            assert!(seen.insert(condition_filename(&c)), "{}", condition_filename(&c));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn published_filenames() {
    let plain = Condition::new("HL-01", 0.0, false, Composition::uniform());
    assert_eq!(condition_filename(&plain), "HL-01__T0.0__N5__rolesFalse.jsonl");
    let mixed = Condition::new("IM-01", 0.0, true, Composition::mixed_lineup());
    assert_eq!(condition_filename(&mixed), "IM-01__T0.0__N5__rolesTrue__multimodel.jsonl");
    let mut ablated = Condition::new("IM-01", 0.0, true, Composition::uniform());
    ablated.ablation = Some(Role::Chair);
    assert_eq!(condition_filename(&ablated), "IM-01__T0.0__N5__rolesTrue__ablate-Chair.jsonl");
}

#[test]
fn scenario_file_validation() {
    let good = r#"
[[scenario]]
id = "X-01"
domain = "Test"
type = "choice_ABC"
options = ["one", "two", "three"]
question = "Which?"
text = "Background."
"#;
    let packets = parse_scenarios(good).unwrap();
    assert_eq!(packets[0].id, "X-01");
    assert!(packets[0].prompt_text().contains("Background."));
    assert!(parse_scenarios(&good.replace(r#", "three""#, "")).is_err());
    assert!(parse_scenarios(&format!("{good}{good}")).is_err());
}
