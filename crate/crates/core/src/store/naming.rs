//! Run-file naming.
//!
//! `{scenario}__T{temp}__N{N}__roles{True|False}[__multimodel][__ablate-{Role}][__k{k}]`
//!
//! Temperatures use the shortest round-trip decimal with Python float
//! formatting (`0.0`, `0.7`, `1e-05`), so names line up with existing
//! artifact directories. The memory-window suffix only appears for
//! non-default windows.

use crate::protocol::{Condition, DEFAULT_MEMORY_WINDOW};

/// Python-style `repr` of a float.
pub fn python_float_repr(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    // `{:e}` yields the shortest round-trip digits, e.g. "1.5e-5".
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if x < 0.0 { "-" } else { "" };

    if (-4..16).contains(&exp) {
        let point = exp + 1; // digits before the decimal point
        let body = if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if point as usize >= digits.len() {
            format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
        } else {
            let (int, frac) = digits.split_at(point as usize);
            format!("{int}.{frac}")
        };
        format!("{sign}{body}")
    } else {
        let (first, rest) = digits.split_at(1);
        let mantissa = if rest.is_empty() { first.to_string() } else { format!("{first}.{rest}") };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{mantissa}e{esign}{:02}", exp.abs())
    }
}

/// File stem identifying a condition.
pub fn condition_key(c: &Condition) -> String {
    let mut key = format!(
        "{}__T{}__N{}__roles{}",
        c.scenario_id,
        python_float_repr(c.temperature),
        c.committee_size,
        if c.roles_enabled { "True" } else { "False" }
    );
    if c.composition.is_mixed() {
        key.push_str("__multimodel");
    }
    if let Some(role) = c.ablation {
        key.push_str("__ablate-");
        key.push_str(role.name());
    }
    if c.memory_window != DEFAULT_MEMORY_WINDOW {
        key.push_str(&format!("__k{}", c.memory_window));
    }
    key
}

pub fn condition_filename(c: &Condition) -> String {
    format!("{}.jsonl", condition_key(c))
}
