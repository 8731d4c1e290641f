//! Synthetic agents with analytically known stability.
//!
//! Both agents speak through the full STATE-line grammar, so runs built on
//! them exercise the same parser and state-table path as a real committee.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError};
use crate::protocol::{PromptBundle, StateTable, Task};
use crate::seeds::StreamRng;
use crate::state_codec::{format_state_line, Option3, PreferenceState};

/// Components are floored here before taking logarithms.
pub const LOGIT_FLOOR: f64 = 1e-12;

/// Coupled log-linear opinion dynamics on the simplex.
///
/// Each turn an agent moves to
/// `softmax(sharpness * (self_weight * l(own) + coupling * l(mean) + bias + noise_scale * xi))`
/// where `l` is the centered log of a simplex point, `mean` the committee's
/// mean known state and `xi` standard normal noise. `self_weight + coupling < 1`
/// contracts every trajectory onto a common fixed point; `> 1` expands
/// perturbations around the uniform point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusDynamicsParams {
    pub self_weight: f64,
    pub coupling: f64,
    /// Per-seat additive bias in log space; missing seats get zero.
    #[serde(default)]
    pub role_bias: Vec<[f64; 3]>,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default = "one")]
    pub sharpness: f64,
    /// Starting state for every seat; drawn uniformly on the simplex from the
    /// seat's stream when absent.
    #[serde(default)]
    pub initial: Option<[f64; 3]>,
}

fn one() -> f64 {
    1.0
}

impl ConsensusDynamicsParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.self_weight >= 0.0 && self.coupling >= 0.0 && self.noise_scale >= 0.0) {
            return Err("self_weight, coupling and noise_scale must be >= 0".into());
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err("sharpness must be finite and > 0".into());
        }
        if self.role_bias.iter().flatten().any(|b| !b.is_finite()) {
            return Err("role_bias must be finite".into());
        }
        Ok(())
    }

    fn bias(&self, agent: usize) -> [f64; 3] {
        self.role_bias.get(agent).copied().unwrap_or([0.0; 3])
    }
}

fn centered_log(p: [f64; 3]) -> [f64; 3] {
    let l = p.map(|v| v.max(LOGIT_FLOOR).ln());
    let mean = l.iter().sum::<f64>() / 3.0;
    l.map(|v| v - mean)
}

fn softmax(l: [f64; 3]) -> [f64; 3] {
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = l.map(|v| (v - max).exp());
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}

fn reply(round: u32, label: &str, pref: [f64; 3]) -> String {
    let conf = (100.0 * pref.iter().copied().fold(0.0, f64::max)).round() as u32;
    let state = PreferenceState::new(pref, conf.min(100), ["synthetic", label]).expect("softmax output is on the simplex");
    format!(
        "Round {round}: on balance I lean toward option {}.\n{}",
        state.top_option(),
        format_state_line(&state)
    )
}

fn ballot_reply(pref: [f64; 3], conf: u32) -> String {
    let decision = Option3::argmax(pref).0;
    format!("{{\"decision\": \"{decision}\", \"confidence\": {conf}}}")
}

/// One consensus-dynamics turn for seat `agent`.
///
/// The committee mean uses every known seat with `own` in this seat's place.
pub fn consensus_step(
    params: &ConsensusDynamicsParams,
    agent: usize,
    round: u32,
    own: [f64; 3],
    table: &StateTable,
    rng: &mut StreamRng,
) -> String {
    let mut sum = own;
    let mut n = 1.0;
    for (i, s) in table.known() {
        if i != agent {
            for (acc, p) in sum.iter_mut().zip(s.pref()) {
                *acc += p;
            }
            n += 1.0;
        }
    }
    let mean = sum.map(|v| v / n);

    let l_own = centered_log(own);
    let l_mean = centered_log(mean);
    let bias = params.bias(agent);
    let mut logits: [f64; 3] =
        std::array::from_fn(|j| params.self_weight * l_own[j] + params.coupling * l_mean[j] + bias[j]);
    // The stream is only consumed when noise is on, so noiseless runs do not
    // depend on it at all.
    if params.noise_scale > 0.0 {
        for l in &mut logits {
            let xi: f64 = StandardNormal.sample(rng);
            *l += params.noise_scale * xi;
        }
    }
    reply(round, "consensus", softmax(logits.map(|v| params.sharpness * v)))
}

#[derive(Debug, Clone)]
pub struct ConsensusBackend {
    descriptor: String,
    params: ConsensusDynamicsParams,
}

impl ConsensusBackend {
    pub fn new(descriptor: impl Into<String>, params: ConsensusDynamicsParams) -> Result<Self, String> {
        params.validate()?;
        Ok(ConsensusBackend { descriptor: descriptor.into(), params })
    }

    fn own_state(&self, prompt: &PromptBundle, rng: &mut StreamRng) -> [f64; 3] {
        match prompt.state_table.get(prompt.agent_index) {
            Some(s) => s.pref(),
            None => self.params.initial.unwrap_or_else(|| random_simplex_point(rng)),
        }
    }
}

impl AgentBackend for ConsensusBackend {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn respond(&self, prompt: &PromptBundle, _temperature: f64, rng: &mut StreamRng) -> Result<String, BackendError> {
        match &prompt.task {
            Task::Deliberate | Task::Repair { .. } => {
                let own = self.own_state(prompt, rng);
                Ok(consensus_step(&self.params, prompt.agent_index, prompt.round, own, &prompt.state_table, rng))
            }
            Task::Ballot | Task::BallotRepair { .. } => {
                let (pref, conf) = match prompt.state_table.get(prompt.agent_index) {
                    Some(s) => (s.pref(), s.conf()),
                    None => ([1.0 / 3.0; 3], 0),
                };
                Ok(ballot_reply(pref, conf))
            }
            Task::Clerk { .. } => Err(BackendError::Unavailable("synthetic agents do not act as clerk".into())),
        }
    }
}

/// Logistic-map driver: the seat reports `x_t = f^t(x0)` with
/// `f(x) = growth * x * (1 - x)`, embedded as `(x, (1-x)/2, (1-x)/2)`.
///
/// At `growth = 4` the map's Lyapunov exponent is exactly `ln 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticDriverParams {
    pub growth: f64,
    pub x0: f64,
}

impl LogisticDriverParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.growth > 0.0 && self.growth <= 4.0) {
            return Err(format!("growth {} outside (0, 4]", self.growth));
        }
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(format!("x0 {} outside (0, 1)", self.x0));
        }
        Ok(())
    }
}

fn logistic_map(growth: f64, x: f64) -> f64 {
    (growth * x * (1.0 - x)).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// `f^round(x0)`.
pub fn logistic_state(params: &LogisticDriverParams, round: u32) -> f64 {
    (0..round).fold(params.x0, |x, _| logistic_map(params.growth, x))
}

pub fn logistic_embedding(x: f64) -> [f64; 3] {
    [x, (1.0 - x) / 2.0, (1.0 - x) / 2.0]
}

/// STATE-bearing reply carrying `x_round`.
pub fn logistic_step(params: &LogisticDriverParams, round: u32) -> String {
    reply(round, "logistic", logistic_embedding(logistic_state(params, round)))
}

#[derive(Debug, Clone)]
pub struct LogisticBackend {
    descriptor: String,
    params: LogisticDriverParams,
}

impl LogisticBackend {
    pub fn new(descriptor: impl Into<String>, params: LogisticDriverParams) -> Result<Self, String> {
        params.validate()?;
        Ok(LogisticBackend { descriptor: descriptor.into(), params })
    }
}

impl AgentBackend for LogisticBackend {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn respond(&self, prompt: &PromptBundle, _temperature: f64, _rng: &mut StreamRng) -> Result<String, BackendError> {
        match &prompt.task {
            Task::Deliberate | Task::Repair { .. } => Ok(logistic_step(&self.params, prompt.round)),
            Task::Ballot | Task::BallotRepair { .. } => {
                let pref = logistic_embedding(logistic_state(&self.params, prompt.round));
                Ok(ballot_reply(pref, 50))
            }
            Task::Clerk { .. } => Err(BackendError::Unavailable("synthetic agents do not act as clerk".into())),
        }
    }
}

/// Uniformly distributed point on the simplex.
pub fn random_simplex_point(rng: &mut impl Rng) -> [f64; 3] {
    let e: [f64; 3] = std::array::from_fn(|_| Exp1.sample(rng));
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}
