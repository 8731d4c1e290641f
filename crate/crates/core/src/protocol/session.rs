use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{
    ballot_list_json, clerk_aggregate, clerk_prompt, parse_ballot, parse_clerk_reply, system_text, AgentSlot, Ballot,
    BranchInfo, ClerkReply, Condition, Exclusion, ExclusionReason, PromptBundle, ProtocolError, RoleMandate,
    RunRecord, StateTable, Task, Timestamps, TurnRecord, WindowEntry, SCHEMA_VERSION,
};
use crate::backends::AgentBackend;
use crate::seeds::{stream, StreamRng};
use crate::state_codec::{parse_state_line_with, strip_state_lines, ParserOptions};

/// Backends for every seat, plus an optional language-model clerk. The
/// deterministic tally is always computed; a clerk backend only adds its
/// answer to the record.
#[derive(Clone)]
pub struct BackendSet {
    pub agents: Vec<Arc<dyn AgentBackend>>,
    pub clerk: Option<Arc<dyn AgentBackend>>,
}

impl BackendSet {
    pub fn new(agents: Vec<Arc<dyn AgentBackend>>) -> Self {
        BackendSet { agents, clerk: None }
    }

    /// The same backend in every seat.
    pub fn uniform(backend: Arc<dyn AgentBackend>, seats: usize) -> Self {
        BackendSet::new(vec![backend; seats])
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub parser: ParserOptions,
    /// Defaults to `{condition key}__r{replicate:03}`.
    pub run_id: Option<String>,
    pub replicate_index: u32,
    /// Checked before every backend call; a set flag ends the run as
    /// `interrupted`.
    pub cancel: Option<Arc<AtomicBool>>,
}

/// One deliberation in progress. A session owns all of its state.
pub struct Session {
    condition: Condition,
    slots: Vec<AgentSlot>,
    mandates: Vec<RoleMandate>,
    scenario_text: String,
    backends: BackendSet,
    order: Vec<usize>,
    transcript: Vec<WindowEntry>,
    table: StateTable,
    turns: Vec<TurnRecord>,
    rngs: Vec<StreamRng>,
    calls: u32,
    parser: ParserOptions,
    cancel: Option<Arc<AtomicBool>>,
}

/// The most recent `min(k, len)` entries, oldest first.
pub fn window_of(transcript: &[WindowEntry], k: usize) -> &[WindowEntry] {
    &transcript[transcript.len().saturating_sub(k)..]
}

impl Session {
    /// Speaking order is one permutation drawn from `seed`, fixed for the
    /// whole run. Seat `i` draws from its own stream of `seed`.
    pub fn new(
        condition: &Condition,
        scenario_text: &str,
        backends: BackendSet,
        seed: u64,
        opts: &RunOptions,
    ) -> Result<Self, ProtocolError> {
        let mandates = condition.mandates()?;
        if backends.agents.len() != condition.committee_size {
            return Err(ProtocolError::BackendCount { got: backends.agents.len(), want: condition.committee_size });
        }
        let n = condition.committee_size;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, 0));
        let rngs = (0..n).map(|i| stream(seed, i as u64 + 1)).collect();
        let mut slots = condition.agent_slots();
        for (slot, backend) in slots.iter_mut().zip(&backends.agents) {
            if slot.model.is_empty() {
                slot.model = backend.descriptor().to_string();
            }
        }
        let table = StateTable::new(slots.iter().map(AgentSlot::label).collect());
        Ok(Session {
            condition: condition.clone(),
            slots,
            mandates,
            scenario_text: scenario_text.to_string(),
            backends,
            order,
            transcript: Vec::new(),
            table,
            turns: Vec::new(),
            rngs,
            calls: 0,
            parser: opts.parser,
            cancel: opts.cancel.clone(),
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn transcript(&self) -> &[WindowEntry] {
        &self.transcript
    }

    pub fn state_table(&self) -> &StateTable {
        &self.table
    }

    pub fn turns(&self) -> &[TurnRecord] {
        &self.turns
    }

    pub fn calls(&self) -> u32 {
        self.calls
    }

    /// Context for seat `agent` at `round`: system prompt with its mandate,
    /// scenario, the last `k` arguments and the rendered state table.
    pub fn assemble_context(&self, agent: usize, round: u32) -> PromptBundle {
        PromptBundle {
            system_text: system_text(&self.mandates[agent].mandate_text),
            scenario_text: self.scenario_text.clone(),
            window: window_of(&self.transcript, self.condition.memory_window).to_vec(),
            state_table_text: self.table.render(),
            task: Task::Deliberate,
            round,
            agent_index: agent,
            state_table: self.table.clone(),
        }
    }

    fn call(&mut self, agent: usize, prompt: &PromptBundle) -> Result<String, Exclusion> {
        if self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
            return Err(Exclusion {
                reason: ExclusionReason::Interrupted,
                round: Some(prompt.round),
                agent_index: Some(agent),
                detail: "run cancelled".into(),
            });
        }
        self.calls += 1;
        let backend = Arc::clone(&self.backends.agents[agent]);
        backend.respond(prompt, self.condition.temperature, &mut self.rngs[agent]).map_err(|e| Exclusion {
            reason: e.exclusion_reason(),
            round: Some(prompt.round),
            agent_index: Some(agent),
            detail: e.to_string(),
        })
    }

    /// Runs one round: every seat speaks once in session order. A failed
    /// parse gets one repair request; a second failure or a backend error
    /// ends the run and no further seats are called.
    pub fn execute_round(&mut self, round: u32) -> Result<Vec<TurnRecord>, Exclusion> {
        let start = self.turns.len();
        for pos in 0..self.order.len() {
            let agent = self.order[pos];
            let mut prompt = self.assemble_context(agent, round);
            let raw = self.call(agent, &prompt)?;
            let first = parse_state_line_with(&raw, self.parser);
            let (parse, repair_reply, first_failure) = if first.is_ok() {
                (first, None, None)
            } else {
                prompt.task = Task::Repair { previous_reply: raw.clone() };
                let repair = self.call(agent, &prompt)?;
                let second = parse_state_line_with(&repair, self.parser);
                if !second.is_ok() {
                    return Err(Exclusion {
                        reason: ExclusionReason::ParseFailure,
                        round: Some(round),
                        agent_index: Some(agent),
                        detail: format!(
                            "{} after repair (first attempt: {})",
                            second.failure_kind, first.failure_kind
                        ),
                    });
                }
                (second.into_repaired(), Some(repair), Some(first.failure_kind))
            };
            let state = parse.state.clone().expect("successful parse carries a state");
            self.table.update(agent, state);
            let argument_text = strip_state_lines(&raw);
            self.transcript.push(WindowEntry {
                round,
                agent_index: agent,
                label: self.slots[agent].label(),
                text: argument_text.clone(),
            });
            self.turns.push(TurnRecord {
                round,
                agent_index: agent,
                role: self.slots[agent].role,
                argument_text,
                raw_reply: raw,
                repair_reply,
                first_failure,
                parse,
            });
        }
        Ok(self.turns[start..].to_vec())
    }

    /// One private ballot per seat, in seat order.
    pub fn collect_ballots(&mut self) -> Result<Vec<Ballot>, Exclusion> {
        let round = self.condition.rounds;
        let mut ballots = Vec::with_capacity(self.slots.len());
        for agent in 0..self.slots.len() {
            let mut prompt = self.assemble_context(agent, round);
            prompt.task = Task::Ballot;
            let raw = self.call(agent, &prompt)?;
            let (parsed, repaired) = match parse_ballot(&raw) {
                Ok(b) => (b, false),
                Err(first) => {
                    prompt.task = Task::BallotRepair { previous_reply: raw };
                    let retry = self.call(agent, &prompt)?;
                    let parsed = parse_ballot(&retry).map_err(|second| Exclusion {
                        reason: ExclusionReason::BallotFailure,
                        round: Some(round),
                        agent_index: Some(agent),
                        detail: format!("{second} after repair (first attempt: {first})"),
                    })?;
                    (parsed, true)
                }
            };
            ballots.push(Ballot { agent_index: agent, decision: parsed.0, confidence: parsed.1, repaired });
        }
        Ok(ballots)
    }

    fn ask_clerk(&mut self, ballots: &[Ballot], tally: &super::CommitteeDecision) -> Option<ClerkReply> {
        let clerk = self.backends.clerk.clone()?;
        let mut prompt = self.assemble_context(0, self.condition.rounds);
        prompt.task = Task::Clerk { prompt: clerk_prompt(&ballot_list_json(ballots, &self.slots)) };
        self.calls += 1;
        let mut rng = stream(self.calls as u64, u64::MAX);
        Some(match clerk.respond(&prompt, 0.0, &mut rng) {
            Ok(text) => parse_clerk_reply(&text, tally),
            Err(e) => ClerkReply {
                raw: format!("error: {e}"),
                decision: None,
                majority_count: None,
                total: None,
                agrees: false,
            },
        })
    }

    /// Plays `rounds`, then ballots and the clerk, into a finished record.
    fn finish(mut self, rounds: std::ops::RangeInclusive<u32>, header: RecordHeader) -> RunRecord {
        let started_at = now();
        let mut excluded = None;
        for round in rounds {
            if let Err(e) = self.execute_round(round) {
                excluded = Some(e);
                break;
            }
        }
        let mut ballots = Vec::new();
        let mut clerk = None;
        let mut llm_clerk = None;
        if excluded.is_none() {
            match self.collect_ballots() {
                Ok(b) => {
                    let tally = clerk_aggregate(&b);
                    llm_clerk = self.ask_clerk(&b, &tally);
                    clerk = Some(tally);
                    ballots = b;
                }
                Err(e) => excluded = Some(e),
            }
        }
        RunRecord {
            schema_version: SCHEMA_VERSION,
            run_id: header.run_id,
            condition_key: self.condition.key(),
            condition: self.condition,
            replicate_index: header.replicate_index,
            seed: header.seed,
            agents: self.slots,
            agent_order: self.order,
            turns: self.turns,
            ballots,
            clerk,
            llm_clerk,
            excluded,
            backend_calls: self.calls,
            branch: header.branch,
            timestamps: Timestamps { started_at, finished_at: now() },
        }
    }
}

struct RecordHeader {
    run_id: String,
    replicate_index: u32,
    seed: u64,
    branch: Option<BranchInfo>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs one complete deliberation. Protocol failures (unparsable replies,
/// backend errors) do not return `Err`: the record comes back with
/// `excluded` set and the partial transcript kept.
pub fn run_deliberation(
    condition: &Condition,
    scenario_text: &str,
    backends: BackendSet,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, ProtocolError> {
    let session = Session::new(condition, scenario_text, backends, seed, opts)?;
    let run_id = opts.run_id.clone().unwrap_or_else(|| format!("{}__r{:03}", condition.key(), opts.replicate_index));
    let header = RecordHeader { run_id, replicate_index: opts.replicate_index, seed, branch: None };
    Ok(session.finish(1..=condition.rounds, header))
}

/// Continues `base` from the end of `branch_round` with a fresh `seed`.
///
/// The session is rebuilt from the persisted record: the same speaking
/// order, the transcript up to and including `branch_round` verbatim, and
/// the state table as it stood then. The returned record holds only the new
/// turns.
pub fn run_continuation(
    base: &RunRecord,
    branch_round: u32,
    branch_index: u32,
    scenario_text: &str,
    backends: BackendSet,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, ProtocolError> {
    let fail = |reason: String| ProtocolError::Continuation { run_id: base.run_id.clone(), reason };
    if base.is_excluded() {
        return Err(fail("base run is excluded".into()));
    }
    let rounds = base.condition.rounds;
    if branch_round == 0 || branch_round >= rounds {
        return Err(fail(format!("branch round {branch_round} must lie in 1..{rounds}")));
    }
    let first = base.first_round();
    if branch_round < first {
        return Err(fail(format!("base record starts at round {first}")));
    }
    let covered = base.turns_in_round(branch_round).count();
    if covered != base.condition.committee_size {
        return Err(fail(format!("base covers {covered} turns in round {branch_round}")));
    }

    let mut session = Session::new(&base.condition, scenario_text, backends, seed, opts)?;
    session.order = base.agent_order.clone();
    for turn in base.turns.iter().filter(|t| t.round <= branch_round) {
        session.transcript.push(WindowEntry {
            round: turn.round,
            agent_index: turn.agent_index,
            label: session.slots[turn.agent_index].label(),
            text: turn.argument_text.clone(),
        });
        if let Some(s) = turn.state() {
            session.table.update(turn.agent_index, s.clone());
        }
    }
    let header = RecordHeader {
        run_id: opts
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{}__b{branch_round}k{branch_index:02}", base.run_id)),
        replicate_index: base.replicate_index,
        seed,
        branch: Some(BranchInfo { base_run_id: base.run_id.clone(), branch_round, branch_index }),
    };
    Ok(session.finish(branch_round + 1..=rounds, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(n: usize) -> Vec<WindowEntry> {
        (1..=n)
            .map(|i| WindowEntry { round: 1, agent_index: 0, label: "Chair".into(), text: format!("arg {i}") })
            .collect()
    }

    #[test]
    fn window_is_a_suffix() {
        let t = entries(20);
        let w = window_of(&t, 3);
        assert_eq!(w.iter().map(|e| e.text.as_str()).collect::<Vec<_>>(), ["arg 18", "arg 19", "arg 20"]);
        assert_eq!(window_of(&entries(4), 15).len(), 4);
        assert_eq!(window_of(&t, 1)[0].text, "arg 20");
        assert!(window_of(&[], 5).is_empty());
    }
}
