//! The windowed-summary deliberation protocol.
//!
//! A committee of `N` agents deliberates over a scenario for a fixed number
//! of rounds. Within each round every agent speaks once, in an order drawn
//! once per run from the run seed. An agent's context is the shared preamble
//! plus its role mandate, the scenario packet, the last `k` arguments of the
//! transcript and a table of every agent's last parsed state. After the last
//! round each agent casts a private ballot and a clerk tallies the majority.
//!
//! [`run_deliberation`] drives one complete run and returns a self-contained
//! [`RunRecord`]; [`Session`] exposes the individual steps.

mod prompts;
mod session;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state_codec::{FailureKind, Option3, ParseOutcome, PreferenceState, PREF_DECIMALS};

pub use prompts::{clerk_prompt, mandate_text, system_text, BALLOT_REPAIR, BALLOT_REQUEST, SHARED_PREAMBLE};
pub use session::{run_continuation, run_deliberation, BackendSet, RunOptions, Session};

/// Version stamped into every persisted [`RunRecord`].
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_ROUNDS: u32 = 20;
pub const DEFAULT_COMMITTEE_SIZE: usize = 5;
pub const DEFAULT_MEMORY_WINDOW: usize = 15;
pub const DEFAULT_TARGET_REPLICATES: u32 = 20;

/// Model used by every slot of a uniform committee.
pub const UNIFORM_MODEL: &str = "gpt-4.1-mini";

/// Mixed lineup, one model per role slot (Chair, Welfare, Rights, Equity,
/// Security).
pub const MIXED_LINEUP: [&str; 5] = ["gpt-4.1", "claude-sonnet-4.6", "gemini-2.5-flash", "grok-3-mini", "gpt-4.1-mini"];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("role {0} is not part of this committee")]
    RoleNotPresent(Role),
    #[error("backend set has {got} agents, condition needs {want}")]
    BackendCount { got: usize, want: usize },
    #[error("cannot continue run {run_id}: {reason}")]
    Continuation { run_id: String, reason: String },
}

/// The five institutional roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Chair,
    Welfare,
    Rights,
    Equity,
    Security,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Chair, Role::Welfare, Role::Rights, Role::Equity, Role::Security];

    pub fn name(self) -> &'static str {
        match self {
            Role::Chair => "Chair",
            Role::Welfare => "Welfare",
            Role::Rights => "Rights",
            Role::Equity => "Equity",
            Role::Security => "Security",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ProtocolError::UnknownRole(s.to_string()))
    }
}

/// A committee seat's framing. `role` is `None` when roles are disabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMandate {
    pub role: Option<Role>,
    pub mandate_text: String,
}

impl RoleMandate {
    pub fn full(role: Role) -> Self {
        RoleMandate { role: Some(role), mandate_text: mandate_text(role).to_string() }
    }

    pub fn none() -> Self {
        RoleMandate { role: None, mandate_text: String::new() }
    }
}

/// Blanks the mandate of `target`. Every seat, including the ablated one,
/// stays in the committee.
pub fn apply_ablation(mandates: &[RoleMandate], target: Role) -> Result<Vec<RoleMandate>, ProtocolError> {
    if !mandates.iter().any(|m| m.role == Some(target)) {
        return Err(ProtocolError::RoleNotPresent(target));
    }
    Ok(mandates
        .iter()
        .map(|m| {
            if m.role == Some(target) {
                RoleMandate { role: m.role, mandate_text: String::new() }
            } else {
                m.clone()
            }
        })
        .collect())
}

/// Which model sits in each slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Composition {
    Uniform { model: String },
    Mixed { models: Vec<String> },
}

impl Composition {
    pub fn uniform() -> Self {
        Composition::Uniform { model: UNIFORM_MODEL.to_string() }
    }

    pub fn mixed_lineup() -> Self {
        Composition::Mixed { models: MIXED_LINEUP.iter().map(|s| s.to_string()).collect() }
    }

    pub fn is_mixed(&self) -> bool {
        matches!(self, Composition::Mixed { .. })
    }

    pub fn model_for(&self, slot: usize) -> Option<&str> {
        match self {
            Composition::Uniform { model } => Some(model),
            Composition::Mixed { models } => models.get(slot).map(String::as_str),
        }
    }
}

/// One cell of the experimental design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub scenario_id: String,
    pub temperature: f64,
    #[serde(default = "default_committee_size")]
    pub committee_size: usize,
    pub roles_enabled: bool,
    pub composition: Composition,
    #[serde(default = "default_memory_window")]
    pub memory_window: usize,
    #[serde(default)]
    pub ablation: Option<Role>,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_target")]
    pub target_replicates: u32,
}

fn default_committee_size() -> usize {
    DEFAULT_COMMITTEE_SIZE
}
fn default_memory_window() -> usize {
    DEFAULT_MEMORY_WINDOW
}
fn default_rounds() -> u32 {
    DEFAULT_ROUNDS
}
fn default_target() -> u32 {
    DEFAULT_TARGET_REPLICATES
}

impl Condition {
    /// A condition with every default applied.
    pub fn new(scenario_id: impl Into<String>, temperature: f64, roles_enabled: bool, composition: Composition) -> Self {
        Condition {
            scenario_id: scenario_id.into(),
            temperature,
            committee_size: DEFAULT_COMMITTEE_SIZE,
            roles_enabled,
            composition,
            memory_window: DEFAULT_MEMORY_WINDOW,
            ablation: None,
            rounds: DEFAULT_ROUNDS,
            target_replicates: DEFAULT_TARGET_REPLICATES,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |msg: String| Err(ProtocolError::InvalidCondition(msg));
        if self.scenario_id.is_empty() {
            return bad("empty scenario id".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!("temperature {} must be finite and >= 0", self.temperature));
        }
        if self.committee_size == 0 {
            return bad("committee size must be >= 1".into());
        }
        if self.memory_window == 0 {
            return bad("memory window must be >= 1".into());
        }
        if self.rounds < 2 {
            return bad(format!("rounds = {} but at least 2 are required", self.rounds));
        }
        if self.roles_enabled && self.committee_size != Role::ALL.len() {
            return bad(format!("roles need a committee of {}, got {}", Role::ALL.len(), self.committee_size));
        }
        if let Some(role) = self.ablation {
            if !self.roles_enabled {
                return bad(format!("ablating {role} requires roles to be enabled"));
            }
        }
        if let Composition::Mixed { models } = &self.composition {
            if models.len() != self.committee_size {
                return bad(format!("mixed lineup lists {} models for {} seats", models.len(), self.committee_size));
            }
        }
        Ok(())
    }

    /// Stable identifier; also the stem of the condition's run file.
    pub fn key(&self) -> String {
        crate::store::condition_key(self)
    }

    /// Canonical text covering every field except the replicate target,
    /// used for seed derivation.
    pub fn canonical(&self) -> String {
        let mut value = serde_json::to_value(self).expect("condition serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("target_replicates");
        }
        value.to_string()
    }

    /// Seat mandates after applying roles and ablation.
    pub fn mandates(&self) -> Result<Vec<RoleMandate>, ProtocolError> {
        self.validate()?;
        if !self.roles_enabled {
            return Ok(vec![RoleMandate::none(); self.committee_size]);
        }
        let full: Vec<RoleMandate> = Role::ALL.into_iter().map(RoleMandate::full).collect();
        match self.ablation {
            Some(target) => apply_ablation(&full, target),
            None => Ok(full),
        }
    }

    pub fn agent_slots(&self) -> Vec<AgentSlot> {
        (0..self.committee_size)
            .map(|i| AgentSlot {
                index: i,
                role: if self.roles_enabled { Role::ALL.get(i).copied() } else { None },
                model: self.composition.model_for(i).unwrap_or_default().to_string(),
            })
            .collect()
    }
}

/// A seat in the committee and the model bound to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSlot {
    pub index: usize,
    pub role: Option<Role>,
    pub model: String,
}

impl AgentSlot {
    /// Transcript label: the role name, or `Agent n` (1-based) without roles.
    pub fn label(&self) -> String {
        match self.role {
            Some(r) => r.name().to_string(),
            None => format!("Agent {}", self.index + 1),
        }
    }
}

/// Last successfully parsed state of every seat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTable {
    labels: Vec<String>,
    entries: Vec<Option<PreferenceState>>,
}

const UNKNOWN_CELL: &str = "\u{2014}";

impl StateTable {
    pub fn new(labels: Vec<String>) -> Self {
        let entries = vec![None; labels.len()];
        StateTable { labels, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, agent: usize) -> Option<&PreferenceState> {
        self.entries.get(agent).and_then(Option::as_ref)
    }

    pub fn update(&mut self, agent: usize, state: PreferenceState) {
        self.entries[agent] = Some(state);
    }

    pub fn known(&self) -> impl Iterator<Item = (usize, &PreferenceState)> {
        self.entries.iter().enumerate().filter_map(|(i, e)| e.as_ref().map(|s| (i, s)))
    }

    /// Mean preference over the seats with a known state.
    pub fn known_mean(&self) -> Option<[f64; 3]> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (_, s) in self.known() {
            for (acc, p) in sum.iter_mut().zip(s.pref()) {
                *acc += p;
            }
            n += 1;
        }
        (n > 0).then(|| sum.map(|v| v / n as f64))
    }

    /// Fixed text layout: `role | p_A | p_B | p_C | conf | tags`, one row per
    /// seat, unknown cells rendered as an em dash.
    pub fn render(&self) -> String {
        let mut out = String::from("role | p_A | p_B | p_C | conf | tags");
        for (label, entry) in self.labels.iter().zip(&self.entries) {
            out.push('\n');
            match entry {
                Some(s) => {
                    let [a, b, c] = s.pref();
                    out.push_str(&format!(
                        "{label} | {a:.p$} | {b:.p$} | {c:.p$} | {} | {}, {}",
                        s.conf(),
                        s.tags()[0],
                        s.tags()[1],
                        p = PREF_DECIMALS
                    ));
                }
                None => {
                    out.push_str(label);
                    for _ in 0..5 {
                        out.push_str(" | ");
                        out.push_str(UNKNOWN_CELL);
                    }
                }
            }
        }
        out
    }
}

/// One transcript argument as shown in a context window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub round: u32,
    pub agent_index: usize,
    pub label: String,
    pub text: String,
}

/// What the agent is being asked to do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Deliberate,
    Repair { previous_reply: String },
    Ballot,
    BallotRepair { previous_reply: String },
    Clerk { prompt: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.to_string(), content: content.into() }
    }
}

/// Everything an agent sees for one call. Text fields are what a language
/// model receives; `state_table`, `round` and `agent_index` give synthetic
/// agents the same information in structured form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub scenario_text: String,
    pub window: Vec<WindowEntry>,
    pub state_table_text: String,
    pub task: Task,
    pub round: u32,
    pub agent_index: usize,
    pub state_table: StateTable,
}

impl PromptBundle {
    /// The user-turn text for a deliberation or ballot call.
    pub fn context_text(&self) -> String {
        let mut out = String::new();
        out.push_str("SCENARIO:\n");
        out.push_str(self.scenario_text.trim_end());
        out.push_str(&format!("\n\nRECENT ARGUMENTS ({} shown):\n", self.window.len()));
        if self.window.is_empty() {
            out.push_str("(none yet)\n");
        }
        for entry in &self.window {
            out.push_str(&format!("[{}] {}\n", entry.label, entry.text));
        }
        out.push_str("\nCOMMITTEE STATE TABLE:\n");
        out.push_str(&self.state_table_text);
        out.push_str(&format!("\n\nROUND {}.", self.round));
        out
    }

    /// Chat messages for a remote model. Repairs replay the failed reply as
    /// an assistant turn before the repair instruction.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let system = ChatMessage::new("system", self.system_text.clone());
        match &self.task {
            Task::Deliberate => vec![
                system,
                ChatMessage::new("user", format!("{}\n{}", self.context_text(), prompts::TURN_INSTRUCTION)),
            ],
            Task::Repair { previous_reply } => vec![
                system,
                ChatMessage::new("user", format!("{}\n{}", self.context_text(), prompts::TURN_INSTRUCTION)),
                ChatMessage::new("assistant", previous_reply.clone()),
                ChatMessage::new("user", crate::state_codec::repair_prompt()),
            ],
            Task::Ballot => vec![system, ChatMessage::new("user", format!("{}\n{}", self.context_text(), BALLOT_REQUEST))],
            Task::BallotRepair { previous_reply } => vec![
                system,
                ChatMessage::new("user", format!("{}\n{}", self.context_text(), BALLOT_REQUEST)),
                ChatMessage::new("assistant", previous_reply.clone()),
                ChatMessage::new("user", BALLOT_REPAIR),
            ],
            Task::Clerk { prompt } => vec![ChatMessage::new("user", prompt.clone())],
        }
    }
}

/// One agent turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub round: u32,
    pub agent_index: usize,
    pub role: Option<Role>,
    /// Reply prose with STATE lines removed.
    pub argument_text: String,
    pub raw_reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_reply: Option<String>,
    /// Failure of the first parse when a repair was needed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<FailureKind>,
    pub parse: ParseOutcome,
}

impl TurnRecord {
    pub fn state(&self) -> Option<&PreferenceState> {
        self.parse.state.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub agent_index: usize,
    pub decision: Option3,
    pub confidence: u32,
    #[serde(default)]
    pub repaired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeDecision {
    pub decision: Option3,
    pub majority_count: usize,
    pub total: usize,
    pub strict_majority: bool,
    /// Several options shared the top count and A < B < C decided.
    pub tie_broken: bool,
}

/// Deterministic plurality tally. Ties go to the earliest option in
/// A < B < C order and never count as a strict majority.
///
/// Panics on an empty ballot list.
pub fn clerk_aggregate(ballots: &[Ballot]) -> CommitteeDecision {
    assert!(!ballots.is_empty(), "clerk needs at least one ballot");
    let mut counts = [0usize; 3];
    for b in ballots {
        counts[b.decision.index()] += 1;
    }
    let top = *counts.iter().max().expect("three options");
    let winner = counts.iter().position(|&c| c == top).expect("max exists");
    let tie_broken = counts.iter().filter(|&&c| c == top).count() > 1;
    let total = ballots.len();
    let needed = (total + 2) / 2; // ceil((N + 1) / 2)
    CommitteeDecision {
        decision: Option3::ALL[winner],
        majority_count: top,
        total,
        strict_majority: !tie_broken && top >= needed,
        tie_broken,
    }
}

/// What the optional language-model clerk answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClerkReply {
    pub raw: String,
    pub decision: Option<Option3>,
    pub majority_count: Option<usize>,
    pub total: Option<usize>,
    /// The reply matches the deterministic tally.
    pub agrees: bool,
}

static JSON_OBJECT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{[^{}]*\}").expect("valid object regex"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BallotError {
    #[error("no JSON object in ballot reply")]
    NoObject,
    #[error("ballot object is not valid JSON: {0}")]
    Json(String),
    #[error("decision must be \"A\", \"B\" or \"C\"")]
    Decision,
    #[error("confidence must be an integer in 0..=100")]
    Confidence,
}

/// Parses `{"decision": "A"|"B"|"C", "confidence": N}`, taking the last
/// object in the reply.
pub fn parse_ballot(text: &str) -> Result<(Option3, u32), BallotError> {
    let object = JSON_OBJECT.find_iter(text).last().ok_or(BallotError::NoObject)?;
    let value: serde_json::Value =
        serde_json::from_str(object.as_str()).map_err(|e| BallotError::Json(e.to_string()))?;
    let decision = value
        .get("decision")
        .and_then(|d| d.as_str())
        .and_then(Option3::parse)
        .ok_or(BallotError::Decision)?;
    let confidence = value
        .get("confidence")
        .and_then(|c| c.as_u64())
        .filter(|c| *c <= 100)
        .ok_or(BallotError::Confidence)?;
    Ok((decision, confidence as u32))
}

/// Parses a clerk reply `{"decision": .., "majority_count": .., "total": ..}`.
pub fn parse_clerk_reply(text: &str, tally: &CommitteeDecision) -> ClerkReply {
    let value = JSON_OBJECT
        .find_iter(text)
        .last()
        .and_then(|m| serde_json::from_str::<serde_json::Value>(m.as_str()).ok());
    let field = |name: &str| value.as_ref().and_then(|v| v.get(name).cloned());
    let decision = field("decision").and_then(|d| d.as_str().and_then(Option3::parse));
    let majority_count = field("majority_count").and_then(|v| v.as_u64()).map(|v| v as usize);
    let total = field("total").and_then(|v| v.as_u64()).map(|v| v as usize);
    ClerkReply {
        raw: text.to_string(),
        agrees: decision == Some(tally.decision)
            && majority_count == Some(tally.majority_count)
            && total == Some(tally.total),
        decision,
        majority_count,
        total,
    }
}

/// Ballot list as handed to the clerk.
pub fn ballot_list_json(ballots: &[Ballot], slots: &[AgentSlot]) -> String {
    let items: Vec<serde_json::Value> = ballots
        .iter()
        .map(|b| {
            serde_json::json!({
                "agent": slots.get(b.agent_index).map(AgentSlot::label).unwrap_or_default(),
                "decision": b.decision.to_string(),
                "confidence": b.confidence,
            })
        })
        .collect();
    serde_json::Value::Array(items).to_string()
}

/// Why a run was excluded from analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    ParseFailure,
    BallotFailure,
    BackendTimeout,
    BackendRateLimit,
    BackendServerError,
    BackendMalformedResponse,
    BackendUnavailable,
    Interrupted,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::ParseFailure => "parse_failure",
            ExclusionReason::BallotFailure => "ballot_failure",
            ExclusionReason::BackendTimeout => "backend_timeout",
            ExclusionReason::BackendRateLimit => "backend_rate_limit",
            ExclusionReason::BackendServerError => "backend_server_error",
            ExclusionReason::BackendMalformedResponse => "backend_malformed_response",
            ExclusionReason::BackendUnavailable => "backend_unavailable",
            ExclusionReason::Interrupted => "interrupted",
        }
    }

    pub fn is_backend_failure(self) -> bool {
        matches!(
            self,
            ExclusionReason::BackendTimeout
                | ExclusionReason::BackendRateLimit
                | ExclusionReason::BackendServerError
                | ExclusionReason::BackendMalformedResponse
                | ExclusionReason::BackendUnavailable
        )
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub reason: ExclusionReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_index: Option<usize>,
    pub detail: String,
}

/// Provenance of a branching continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub base_run_id: String,
    pub branch_round: u32,
    pub branch_index: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_at: String,
    pub finished_at: String,
}

/// One complete replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub condition_key: String,
    pub condition: Condition,
    pub replicate_index: u32,
    pub seed: u64,
    pub agents: Vec<AgentSlot>,
    /// Speaking order within every round.
    pub agent_order: Vec<usize>,
    pub turns: Vec<TurnRecord>,
    pub ballots: Vec<Ballot>,
    pub clerk: Option<CommitteeDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_clerk: Option<ClerkReply>,
    pub excluded: Option<Exclusion>,
    /// Backend calls made, repairs included.
    pub backend_calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchInfo>,
    pub timestamps: Timestamps,
}

impl RunRecord {
    pub fn is_excluded(&self) -> bool {
        self.excluded.is_some()
    }

    pub fn decision(&self) -> Option<Option3> {
        self.clerk.map(|c| c.decision)
    }

    /// First round covered by `turns` (greater than 1 for continuations).
    pub fn first_round(&self) -> u32 {
        self.branch.as_ref().map_or(1, |b| b.branch_round + 1)
    }

    pub fn turns_in_round(&self, round: u32) -> impl Iterator<Item = &TurnRecord> {
        self.turns.iter().filter(move |t| t.round == round)
    }
}
