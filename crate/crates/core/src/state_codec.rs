//! The STATE line grammar.
//!
//! Every agent reply must carry exactly one machine-readable line of the form
//!
//! ```text
//! STATE: pref=[0.5,0.3,0.2]; conf=70; tags=["cost","fairness"]
//! ```
//!
//! Parsing is deterministic: the last matching line in the reply wins, the
//! preference triple is renormalized onto the simplex when it drifts by at
//! most [`DEFAULT_SIMPLEX_TOLERANCE`], and anything else is reported as a
//! [`FailureKind`] rather than repaired heuristically.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Accepted drift of `p_A + p_B + p_C` away from 1 before renormalization.
pub const DEFAULT_SIMPLEX_TOLERANCE: f64 = 0.02;

/// Decimal places used by [`format_state_line`].
pub const PREF_DECIMALS: usize = 6;

/// Absorbs decimal rounding so a sum of exactly `1 ± tol` is accepted.
const TOLERANCE_SLACK: f64 = 1e-12;

const REPAIR_PROMPT: &str = "Your previous response did not contain a valid STATE line.\n\
Please respond with ONLY the corrected STATE line in the format:\n\
STATE: pref=[pA,pB,pC]; conf=NN; tags=[\"tag1\",\"tag2\"]";

// Loose enough to locate a STATE line whose contents are broken, so that the
// failure can be classified instead of collapsing into "no line".
static STATE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"STATE:[ \t]*pref=\[([^\]\n]*)\][ \t]*;[ \t]*conf=[ \t]*([^;\n]*?)[ \t]*;[ \t]*tags=\[([^\]\n]*)\]")
        .expect("valid STATE regex")
});

static DECIMAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)$").expect("valid decimal regex"));

static STRICT_DECIMAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[0-9]+\.[0-9]+$").expect("valid decimal regex"));

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[0-9]+$").expect("valid integer regex"));

static SNAKE_CASE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[a-z0-9]+(?:_[a-z0-9]+)*$").expect("valid snake_case regex"));

/// Why a reply did not yield a [`PreferenceState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    NoStateLine,
    MalformedNumbers,
    SimplexViolation,
    TagViolation,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureKind::None => "none",
            FailureKind::NoStateLine => "no_state_line",
            FailureKind::MalformedNumbers => "malformed_numbers",
            FailureKind::SimplexViolation => "simplex_violation",
            FailureKind::TagViolation => "tag_violation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("preference triple {0:?} is not on the simplex")]
    SimplexViolation([f64; 3]),
    #[error("confidence {0} outside 0..=100")]
    Confidence(u32),
    #[error("tags must be exactly two non-empty strings without quotes, brackets or line breaks: {0:?}")]
    Tags(Vec<String>),
}

/// One agent's parsed position: a point on the 3-option simplex plus
/// confidence and two concept tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceState {
    pref: [f64; 3],
    conf: u32,
    tags: [String; 2],
}

impl PreferenceState {
    /// Builds a state, renormalizing `pref` with the default tolerance.
    pub fn new(pref: [f64; 3], conf: u32, tags: [impl Into<String>; 2]) -> Result<Self, StateError> {
        let pref = normalize_preferences(pref, DEFAULT_SIMPLEX_TOLERANCE)?;
        if conf > 100 {
            return Err(StateError::Confidence(conf));
        }
        let [a, b] = tags;
        let tags = [a.into(), b.into()];
        if !tags.iter().all(|t| valid_tag(t)) {
            return Err(StateError::Tags(tags.to_vec()));
        }
        Ok(PreferenceState { pref, conf, tags })
    }

    pub fn pref(&self) -> [f64; 3] {
        self.pref
    }

    pub fn conf(&self) -> u32 {
        self.conf
    }

    pub fn tags(&self) -> &[String; 2] {
        &self.tags
    }

    /// Index of the largest preference; ties go to the earlier option.
    pub fn top_option(&self) -> Option3 {
        Option3::argmax(self.pref).0
    }
}

fn valid_tag(tag: &str) -> bool {
    !tag.trim().is_empty() && !tag.contains(['"', '\'', ']', '[', ',', '\n', '\r'])
}

/// One of the three decision options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Option3 {
    A,
    B,
    C,
}

impl Option3 {
    pub const ALL: [Option3; 3] = [Option3::A, Option3::B, Option3::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Option3> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Option3> {
        match s {
            "A" => Some(Option3::A),
            "B" => Some(Option3::B),
            "C" => Some(Option3::C),
            _ => None,
        }
    }

    /// Argmax over a triple. The flag is set when the maximum was shared and
    /// the earliest option was taken.
    pub fn argmax(values: [f64; 3]) -> (Option3, bool) {
        let mut best = 0;
        for i in 1..3 {
            if values[i] > values[best] {
                best = i;
            }
        }
        let tied = (0..3).any(|i| i != best && values[i] == values[best]);
        (Self::ALL[best], tied)
    }
}

impl fmt::Display for Option3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Option3::A => "A",
            Option3::B => "B",
            Option3::C => "C",
        })
    }
}

/// Result of running the parser over one reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub state: Option<PreferenceState>,
    pub failure_kind: FailureKind,
    pub repaired: bool,
}

impl ParseOutcome {
    fn ok(state: PreferenceState) -> Self {
        ParseOutcome { state: Some(state), failure_kind: FailureKind::None, repaired: false }
    }

    fn fail(kind: FailureKind) -> Self {
        ParseOutcome { state: None, failure_kind: kind, repaired: false }
    }

    pub fn is_ok(&self) -> bool {
        self.state.is_some()
    }

    /// Marks an outcome as the product of the repair round-trip.
    pub fn into_repaired(mut self) -> Self {
        self.repaired = true;
        self
    }
}

/// Parser configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParserOptions {
    pub tolerance: f64,
    /// Require snake_case tags and preferences written with a decimal point.
    pub strict: bool,
}

impl Default for ParserOptions {
    fn default() -> Self {
        ParserOptions { tolerance: DEFAULT_SIMPLEX_TOLERANCE, strict: false }
    }
}

/// Parses with the default (template) grammar.
pub fn parse_state_line(text: &str) -> ParseOutcome {
    parse_state_line_with(text, ParserOptions::default())
}

pub fn parse_state_line_with(text: &str, opts: ParserOptions) -> ParseOutcome {
    let Some(caps) = STATE_LINE.captures_iter(text).last() else {
        return ParseOutcome::fail(FailureKind::NoStateLine);
    };

    let number_ok = |s: &str| {
        if opts.strict {
            STRICT_DECIMAL.is_match(s)
        } else {
            DECIMAL.is_match(s)
        }
    };

    let mut raw = [0.0; 3];
    let mut count = 0;
    for part in caps[1].split(',') {
        let part = part.trim();
        if count == 3 {
            return ParseOutcome::fail(FailureKind::MalformedNumbers);
        }
        if let Some(unsigned) = part.strip_prefix('-') {
            // A well-formed negative number is a simplex problem, not a syntax one.
            if !number_ok(unsigned.trim_start()) {
                return ParseOutcome::fail(FailureKind::MalformedNumbers);
            }
            return ParseOutcome::fail(FailureKind::SimplexViolation);
        }
        if !number_ok(part) {
            return ParseOutcome::fail(FailureKind::MalformedNumbers);
        }
        match part.parse::<f64>() {
            Ok(v) if v.is_finite() => raw[count] = v,
            _ => return ParseOutcome::fail(FailureKind::MalformedNumbers),
        }
        count += 1;
    }
    if count != 3 {
        return ParseOutcome::fail(FailureKind::MalformedNumbers);
    }

    let conf_text = caps[2].trim();
    if !INTEGER.is_match(conf_text) {
        return ParseOutcome::fail(FailureKind::MalformedNumbers);
    }
    let conf = match conf_text.parse::<u32>() {
        Ok(c) if c <= 100 => c,
        _ => return ParseOutcome::fail(FailureKind::MalformedNumbers),
    };

    let pref = match normalize_preferences(raw, opts.tolerance) {
        Ok(p) => p,
        Err(_) => return ParseOutcome::fail(FailureKind::SimplexViolation),
    };

    let Some(tags) = split_tags(&caps[3], opts.strict) else {
        return ParseOutcome::fail(FailureKind::TagViolation);
    };
    let Ok(tags) = <[String; 2]>::try_from(tags) else {
        return ParseOutcome::fail(FailureKind::TagViolation);
    };
    if !tags.iter().all(|t| valid_tag(t)) {
        return ParseOutcome::fail(FailureKind::TagViolation);
    }

    ParseOutcome::ok(PreferenceState { pref, conf, tags })
}

/// Splits the inside of `tags=[...]`. Default mode accepts double-quoted,
/// single-quoted or bare tags; strict mode wants double-quoted snake_case.
fn split_tags(inner: &str, strict: bool) -> Option<Vec<String>> {
    let inner = inner.trim();
    if inner.is_empty() {
        return Some(Vec::new());
    }
    let mut tags = Vec::new();
    for item in inner.split(',') {
        let item = item.trim();
        let unquoted = if let Some(body) = item.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
            body
        } else if strict {
            return None;
        } else if let Some(body) = item.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')) {
            body
        } else {
            item
        };
        let tag = unquoted.trim();
        if tag.is_empty() || tag.contains(['"', '\'']) {
            return None;
        }
        if strict && !SNAKE_CASE.is_match(tag) {
            return None;
        }
        tags.push(tag.to_string());
    }
    Some(tags)
}

/// Projects a near-simplex triple onto the simplex by dividing by its sum.
///
/// Rejects negative components and sums further than `tol` from 1.
pub fn normalize_preferences(raw: [f64; 3], tol: f64) -> Result<[f64; 3], StateError> {
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(StateError::SimplexViolation(raw));
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > tol + TOLERANCE_SLACK || sum <= 0.0 {
        return Err(StateError::SimplexViolation(raw));
    }
    Ok(raw.map(|v| v / sum))
}

/// Canonical single-line rendering with fixed six-decimal preferences.
pub fn format_state_line(state: &PreferenceState) -> String {
    let [a, b, c] = state.pref;
    format!(
        "STATE: pref=[{a:.prec$},{b:.prec$},{c:.prec$}]; conf={}; tags=[\"{}\",\"{}\"]",
        state.conf,
        state.tags[0],
        state.tags[1],
        prec = PREF_DECIMALS
    )
}

/// The single repair instruction sent after a failed parse.
pub fn repair_prompt() -> &'static str {
    REPAIR_PROMPT
}

/// Removes every STATE line from a reply, leaving the argument prose.
pub fn strip_state_lines(text: &str) -> String {
    text.lines()
        .filter(|line| !STATE_LINE.is_match(line))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}
