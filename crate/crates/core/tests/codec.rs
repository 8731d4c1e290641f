use committee::state_codec::{
    format_state_line, normalize_preferences, parse_state_line, parse_state_line_with, repair_prompt, FailureKind,
    ParserOptions, PreferenceState, DEFAULT_SIMPLEX_TOLERANCE,
};
use proptest::prelude::*;

/// Valid states on the six-decimal grid the formatter writes.
fn grid_state() -> impl Strategy<Value = PreferenceState> {
    (0u32..=1_000_000, 0u32..=1_000_000, 0u32..=100, "[a-z]{1,8}(_[a-z]{1,6})?", "[a-z]{1,8}").prop_map(
        |(a, b, conf, t1, t2)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = [lo as f64 / 1e6, (hi - lo) as f64 / 1e6, (1_000_000 - hi) as f64 / 1e6];
            PreferenceState::new(p, conf, [t1, t2]).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn format_then_parse_is_identity(s in grid_state()) {
        let out = parse_state_line(&format_state_line(&s));
        prop_assert_eq!(out.failure_kind, FailureKind::None);
        let back = out.state.unwrap();
        for k in 0..3 {
            prop_assert!((back.pref()[k] - s.pref()[k]).abs() < 1e-9);
        }
        prop_assert_eq!(back.conf(), s.conf());
        prop_assert_eq!(back.tags(), s.tags());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn normalization_is_idempotent(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let sum = a + b + c;
        prop_assume!(sum > 0.0);
        let scale = 1.0 + ((a * 7.0).fract() - 0.5) * 0.03;
        let raw = [a / sum * scale, b / sum * scale, c / sum * scale];
        let once = normalize_preferences(raw, DEFAULT_SIMPLEX_TOLERANCE).unwrap();
        let twice = normalize_preferences(once, DEFAULT_SIMPLEX_TOLERANCE).unwrap();
        for k in 0..3 {
            prop_assert!((once[k] - twice[k]).abs() < 1e-15);
        }
        prop_assert!((once.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn state_line_found_anywhere_in_prose(prefix in "[A-Za-z ,.]{0,60}", suffix in "[A-Za-z ,.]{0,60}") {
        let line = "STATE: pref=[0.2,0.3,0.5]; conf=40; tags=[\"a\",\"b\"]";
        for text in [format!("{line}\n{suffix}"), format!("{prefix}\n{line}"), format!("{prefix}\n{line}\n{suffix}")] {
            let out = parse_state_line(&text);
            prop_assert_eq!(out.failure_kind, FailureKind::None);
            prop_assert_eq!(out.state.unwrap().pref(), [0.2, 0.3, 0.5]);
        }
    }
}

#[test]
fn last_state_line_wins() {
    let text = "Template: STATE: pref=[0.1,0.1,0.8]; conf=10; tags=[\"a\",\"b\"]\n\
                My view.\nSTATE: pref=[0.6,0.2,0.2]; conf=90; tags=[\"c\",\"d\"]";
    let s = parse_state_line(text).state.unwrap();
    assert_eq!(s.pref(), [0.6, 0.2, 0.2]);
    assert_eq!(s.conf(), 90);
}

#[test]
fn failure_kinds() {
    let cases = [
        ("no structured line here", FailureKind::NoStateLine),
        ("STATE: pref=[0.5,abc,0.2]; conf=70; tags=[\"a\",\"b\"]", FailureKind::MalformedNumbers),
        ("STATE: pref=[0.5,0.3]; conf=70; tags=[\"a\",\"b\"]", FailureKind::MalformedNumbers),
        ("STATE: pref=[0.5,0.3,0.2]; conf=7.5; tags=[\"a\",\"b\"]", FailureKind::MalformedNumbers),
        ("STATE: pref=[0.5,0.3,0.2]; conf=101; tags=[\"a\",\"b\"]", FailureKind::MalformedNumbers),
        ("STATE: pref=[0.4,0.4,0.4]; conf=70; tags=[\"a\",\"b\"]", FailureKind::SimplexViolation),
        ("STATE: pref=[-0.1,0.6,0.5]; conf=70; tags=[\"a\",\"b\"]", FailureKind::SimplexViolation),
        ("STATE: pref=[0.5,0.3,0.2]; conf=70; tags=[\"a\"]", FailureKind::TagViolation),
        ("STATE: pref=[0.5,0.3,0.2]; conf=70; tags=[\"a\",\"b\",\"c\"]", FailureKind::TagViolation),
    ];
    for (text, kind) in cases {
        let out = parse_state_line(text);
        assert_eq!(out.failure_kind, kind, "{text}");
        assert!(out.state.is_none());
        assert!(!out.repaired);
    }
}

#[test]
fn strict_mode_wants_snake_case_and_decimals() {
    let strict = ParserOptions { strict: true, ..ParserOptions::default() };
    let loose = "STATE: pref=[1,0,0]; conf=70; tags=[cost,Fairness]";
    assert!(parse_state_line(loose).is_ok());
    assert!(!parse_state_line_with(loose, strict).is_ok());
    let good = "STATE: pref=[1.0,0.0,0.0]; conf=70; tags=[\"cost\",\"due_process\"]";
    assert!(parse_state_line_with(good, strict).is_ok());
}

#[test]
fn repair_prompt_is_constant_and_carries_the_grammar() {
    let p = repair_prompt();
    assert!(p.contains("did not contain a valid STATE line"));
    assert!(p.contains("STATE: pref=["));
    assert_eq!(p, repair_prompt());
}

#[test]
fn parse_is_deterministic() {
    let text = "x\nSTATE: pref=[0.49,0.29,0.20]; conf=80; tags=[\"x\",\"y\"]";
    assert_eq!(parse_state_line(text), parse_state_line(text));
}
