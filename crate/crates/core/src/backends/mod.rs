//! Agent implementations.
//!
//! * [`ScriptedBackend`] replays fixed replies, for protocol tests.
//! * [`ConsensusBackend`] and [`LogisticBackend`] are synthetic agents with
//!   known stability properties, used to validate the estimators.
//! * [`RemoteBackend`] talks to a chat-completion endpoint.
//!
//! Scripted and synthetic agents are pure functions of the prompt and the
//! agent's random stream, so a run that uses only them is fully replayable.
//! The remote adapter is not.

mod remote;
mod scripted;
mod synthetic;

use thiserror::Error;

use crate::protocol::{ExclusionReason, PromptBundle};
use crate::seeds::StreamRng;

pub use remote::{
    load_endpoints, EndpointConfig, HttpReply, RemoteBackend, RemoteLimits, RemoteStats, ReqwestTransport, Transport,
    TransportError,
};
pub use scripted::{scripted_respond, Script, ScriptedBackend};
pub use synthetic::{
    consensus_step, logistic_embedding, logistic_state, logistic_step, random_simplex_point, ConsensusBackend,
    ConsensusDynamicsParams, LogisticBackend, LogisticDriverParams, LOGIT_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("server error (status {status}) after {attempts} attempt(s)")]
    Server { status: u16, attempts: u32 },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("script exhausted: {0}")]
    Script(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

impl BackendError {
    /// Exclusion category recorded when this error ends a run.
    pub fn exclusion_reason(&self) -> ExclusionReason {
        match self {
            BackendError::Timeout { .. } => ExclusionReason::BackendTimeout,
            BackendError::RateLimited { .. } => ExclusionReason::BackendRateLimit,
            BackendError::Server { .. } => ExclusionReason::BackendServerError,
            BackendError::Malformed(_) => ExclusionReason::BackendMalformedResponse,
            BackendError::Script(_) | BackendError::Unavailable(_) => ExclusionReason::BackendUnavailable,
        }
    }
}

/// An agent seat's implementation.
///
/// `rng` is the seat's own stream, derived from the run seed and seat index.
pub trait AgentBackend: Send + Sync {
    /// Model identifier recorded with the run.
    fn descriptor(&self) -> &str;

    fn respond(&self, prompt: &PromptBundle, temperature: f64, rng: &mut StreamRng) -> Result<String, BackendError>;
}

/// A backend that always fails; stands in for a seat whose model could not
/// be resolved so the run is excluded instead of aborting the batch.
#[derive(Debug, Clone)]
pub struct UnavailableBackend {
    descriptor: String,
    reason: String,
}

impl UnavailableBackend {
    pub fn new(descriptor: impl Into<String>, reason: impl Into<String>) -> Self {
        UnavailableBackend { descriptor: descriptor.into(), reason: reason.into() }
    }
}

impl AgentBackend for UnavailableBackend {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn respond(&self, _: &PromptBundle, _: f64, _: &mut StreamRng) -> Result<String, BackendError> {
        Err(BackendError::Unavailable(self.reason.clone()))
    }
}
