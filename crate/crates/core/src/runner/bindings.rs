use std::collections::BTreeMap;
use std::sync::Arc;

use super::{BackendSpec, BackendTable, RunnerError};
use crate::backends::{
    load_endpoints, AgentBackend, ConsensusBackend, EndpointConfig, LogisticBackend, LogisticDriverParams,
    RemoteBackend, RemoteLimits, ReqwestTransport, Script, ScriptedBackend, Transport, UnavailableBackend,
};
use crate::protocol::{BackendSet, Condition};

enum Binding {
    /// One instance shared by every seat and job.
    Shared(Arc<dyn AgentBackend>),
    Scripted { fallback: Option<Script>, seats: Vec<Script> },
    Logistic { growth: f64, x0: f64, replicate_offset: f64 },
}

/// Resolves the backend behind each seat's model.
pub struct BackendRegistry {
    default: Option<Binding>,
    models: BTreeMap<String, Binding>,
    clerk: Option<Binding>,
}

struct RemoteContext {
    endpoints: Vec<EndpointConfig>,
    transport: Option<Arc<dyn Transport>>,
    limits: Arc<RemoteLimits>,
}

impl RemoteContext {
    fn backend(&mut self, endpoint: &str, descriptor: &str) -> Result<Arc<dyn AgentBackend>, RunnerError> {
        let Some(config) = self.endpoints.iter().find(|e| e.name == endpoint).cloned() else {
            return Ok(Arc::new(UnavailableBackend::new(descriptor, format!("no endpoint named {endpoint}"))));
        };
        let transport = match &self.transport {
            Some(t) => Arc::clone(t),
            None => {
                let t: Arc<dyn Transport> = Arc::new(ReqwestTransport::new().map_err(RunnerError::Config)?);
                self.transport = Some(Arc::clone(&t));
                t
            }
        };
        let backend = RemoteBackend::new(config, transport, Arc::clone(&self.limits)).map_err(RunnerError::Config)?;
        Ok(Arc::new(backend))
    }
}

fn bind(spec: &BackendSpec, descriptor: &str, remote: &mut RemoteContext) -> Result<Binding, RunnerError> {
    Ok(match spec {
        BackendSpec::Scripted { script, seats } => {
            if script.is_none() && seats.is_empty() {
                return Err(RunnerError::Config(format!("{descriptor}: scripted backend without a script")));
            }
            Binding::Scripted { fallback: script.clone(), seats: seats.clone() }
        }
        BackendSpec::Consensus(params) => Binding::Shared(Arc::new(
            ConsensusBackend::new(descriptor, params.clone()).map_err(|e| RunnerError::Config(format!("{descriptor}: {e}")))?,
        )),
        BackendSpec::Logistic { growth, x0, replicate_offset } => {
            LogisticDriverParams { growth: *growth, x0: *x0 }
                .validate()
                .map_err(|e| RunnerError::Config(format!("{descriptor}: {e}")))?;
            Binding::Logistic { growth: *growth, x0: *x0, replicate_offset: *replicate_offset }
        }
        BackendSpec::Remote { endpoint } => Binding::Shared(remote.backend(endpoint, descriptor)?),
    })
}

impl BackendRegistry {
    pub fn from_table(table: &BackendTable, max_in_flight: usize) -> Result<Self, RunnerError> {
        let endpoints = match &table.endpoints_file {
            Some(path) => load_endpoints(path).map_err(RunnerError::Config)?,
            None => Vec::new(),
        };
        Self::with_endpoints(table, endpoints, None, max_in_flight)
    }

    /// As [`from_table`](Self::from_table) with explicit endpoints and an
    /// optional transport in place of HTTP.
    pub fn with_endpoints(
        table: &BackendTable,
        endpoints: Vec<EndpointConfig>,
        transport: Option<Arc<dyn Transport>>,
        max_in_flight: usize,
    ) -> Result<Self, RunnerError> {
        let limits = RemoteLimits::new(table.max_in_flight.unwrap_or(max_in_flight));
        let mut remote = RemoteContext { endpoints, transport, limits };
        let default = table.default.as_ref().map(|s| bind(s, "default", &mut remote)).transpose()?;
        let models = table
            .models
            .iter()
            .map(|(name, spec)| Ok((name.clone(), bind(spec, name, &mut remote)?)))
            .collect::<Result<_, RunnerError>>()?;
        let clerk = table.clerk.as_ref().map(|s| bind(s, "clerk", &mut remote)).transpose()?;
        Ok(BackendRegistry { default, models, clerk })
    }

    /// Every model bound to one spec.
    pub fn single(spec: &BackendSpec) -> Result<Self, RunnerError> {
        let table = BackendTable { default: Some(spec.clone()), ..Default::default() };
        Self::from_table(&table, 1)
    }

    fn instantiate(binding: &Binding, model: &str, seat: usize, replicate: u32) -> Arc<dyn AgentBackend> {
        match binding {
            Binding::Shared(b) => Arc::clone(b),
            Binding::Scripted { fallback, seats } => match seats.get(seat).or(fallback.as_ref()) {
                Some(script) => Arc::new(ScriptedBackend::new(model, script.clone())),
                None => Arc::new(UnavailableBackend::new(model, format!("no script for seat {seat}"))),
            },
            Binding::Logistic { growth, x0, replicate_offset } => {
                let params = LogisticDriverParams { growth: *growth, x0: x0 + replicate_offset * replicate as f64 };
                match LogisticBackend::new(model, params) {
                    Ok(b) => Arc::new(b),
                    Err(e) => Arc::new(UnavailableBackend::new(model, e)),
                }
            }
        }
    }

    /// Backends for every seat of `condition`. Unresolvable models get a
    /// backend that always fails, so their runs end excluded.
    pub fn backends_for(&self, condition: &Condition, replicate: u32) -> BackendSet {
        let agents = condition
            .agent_slots()
            .iter()
            .map(|slot| match self.models.get(&slot.model).or(self.default.as_ref()) {
                Some(binding) => Self::instantiate(binding, &slot.model, slot.index, replicate),
                None => Arc::new(UnavailableBackend::new(slot.model.clone(), format!("no backend bound to {}", slot.model)))
                    as Arc<dyn AgentBackend>,
            })
            .collect();
        let clerk = self.clerk.as_ref().map(|b| Self::instantiate(b, "clerk", 0, replicate));
        BackendSet { agents, clerk }
    }
}
