#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use committee::analysis::{CommitteeTrajectory, Point};
use committee::backends::{AgentBackend, BackendError, Script, ScriptedBackend};
use committee::protocol::{
    run_deliberation, BackendSet, Composition, Condition, PromptBundle, RunOptions, RunRecord, Task,
};
use committee::seeds::StreamRng;
use committee::state_codec::{format_state_line, PreferenceState};

pub fn state_line(p: Point, conf: u32) -> String {
    format_state_line(&PreferenceState::new(p, conf, ["x", "y"]).unwrap())
}

pub fn ballot(decision: &str) -> String {
    format!("{{\"decision\": \"{decision}\", \"confidence\": 60}}")
}

/// Roles off, uniform lineup, `n` seats, `rounds` rounds.
pub fn plain_condition(scenario: &str, n: usize, rounds: u32) -> Condition {
    let mut c = Condition::new(scenario, 0.0, false, Composition::uniform());
    c.committee_size = n;
    c.rounds = rounds;
    c
}

/// One scripted run where seat `i` reports `prefs[i][t]` in round `t + 1`
/// and votes `votes[i]`.
pub fn run_with_prefs(condition: &Condition, prefs: &[Vec<Point>], votes: &[&str], replicate: u32) -> RunRecord {
    let agents: Vec<Arc<dyn AgentBackend>> = prefs
        .iter()
        .zip(votes)
        .map(|(seq, vote)| {
            let script = Script {
                turns: seq.iter().map(|p| format!("Argument.\n{}", state_line(*p, 50))).collect(),
                ballot: ballot(vote),
                ..Default::default()
            };
            Arc::new(ScriptedBackend::new("scripted", script)) as Arc<dyn AgentBackend>
        })
        .collect();
    let opts = RunOptions { replicate_index: replicate, ..Default::default() };
    run_deliberation(condition, "Scenario text.", BackendSet::new(agents), 1000 + replicate as u64, &opts).unwrap()
}

/// Scripted backend that remembers every prompt it was given.
pub struct Recorder {
    inner: ScriptedBackend,
    pub prompts: Mutex<Vec<PromptBundle>>,
}

impl Recorder {
    pub fn new(script: Script) -> Arc<Self> {
        Arc::new(Recorder { inner: ScriptedBackend::new("recorder", script), prompts: Mutex::new(Vec::new()) })
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.prompts.lock().unwrap().iter().map(|p| p.task.clone()).collect()
    }
}

impl AgentBackend for Recorder {
    fn descriptor(&self) -> &str {
        self.inner.descriptor()
    }

    fn respond(&self, prompt: &PromptBundle, temperature: f64, rng: &mut StreamRng) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(prompt.clone());
        self.inner.respond(prompt, temperature, rng)
    }
}

/// Trajectory moving along (1, -1, 0)/√2 around the simplex centre.
pub fn line_trajectory(id: &str, offsets: impl IntoIterator<Item = f64>) -> CommitteeTrajectory {
    let s = 1.0 / 2f64.sqrt();
    let means = offsets.into_iter().map(|o| [1.0 / 3.0 + o * s, 1.0 / 3.0 - o * s, 1.0 / 3.0]).collect();
    CommitteeTrajectory::new(id, 1, means)
}

/// Mean pairwise distance by a straightforward double loop.
pub fn brute_force_divergence(trajs: &[CommitteeTrajectory], i: usize) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for a in 0..trajs.len() {
        for b in 0..trajs.len() {
            if a < b {
                let (p, q) = (trajs[a].means[i], trajs[b].means[i]);
                total += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                pairs += 1.0;
            }
        }
    }
    total / pairs
}
