use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError};
use crate::protocol::{PromptBundle, Task};
use crate::seeds::StreamRng;

/// Fixed replies for one seat.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    /// Reply for round `i + 1`.
    pub turns: Vec<String>,
    /// Replay `turns` from the start once exhausted.
    #[serde(default)]
    pub cycle: bool,
    /// Reply to the repair prompt, keyed by round. Rounds without an entry
    /// repeat the original reply.
    #[serde(default)]
    pub repairs: BTreeMap<u32, String>,
    #[serde(default)]
    pub ballot: String,
    #[serde(default)]
    pub ballot_repair: Option<String>,
    #[serde(default)]
    pub clerk: Option<String>,
}

impl Script {
    /// The same reply every round.
    pub fn constant(reply: impl Into<String>, ballot: impl Into<String>) -> Self {
        Script { turns: vec![reply.into()], cycle: true, ballot: ballot.into(), ..Default::default() }
    }
}

/// Reply scripted for `round` (1-based).
pub fn scripted_respond(script: &Script, round: u32) -> Result<&str, BackendError> {
    let n = script.turns.len();
    let idx = round.checked_sub(1).map(|r| r as usize);
    let idx = match idx {
        Some(i) if i < n => i,
        Some(i) if script.cycle && n > 0 => i % n,
        _ => return Err(BackendError::Script(format!("no scripted reply for round {round} ({n} scripted)"))),
    };
    Ok(&script.turns[idx])
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    descriptor: String,
    script: Script,
}

impl ScriptedBackend {
    pub fn new(descriptor: impl Into<String>, script: Script) -> Self {
        ScriptedBackend { descriptor: descriptor.into(), script }
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

impl AgentBackend for ScriptedBackend {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn respond(&self, prompt: &PromptBundle, _temperature: f64, _rng: &mut StreamRng) -> Result<String, BackendError> {
        let s = &self.script;
        let reply = match &prompt.task {
            Task::Deliberate => scripted_respond(s, prompt.round)?,
            Task::Repair { .. } => match s.repairs.get(&prompt.round) {
                Some(r) => r,
                None => scripted_respond(s, prompt.round)?,
            },
            Task::Ballot => &s.ballot,
            Task::BallotRepair { .. } => s.ballot_repair.as_deref().unwrap_or(&s.ballot),
            Task::Clerk { .. } => {
                s.clerk.as_deref().ok_or_else(|| BackendError::Script("no scripted clerk reply".into()))?
            }
        };
        Ok(reply.to_string())
    }
}
