//! Generic chat-completion adapter.
//!
//! Provider differences live entirely in [`EndpointConfig`]: URL, request
//! body template, header set and the JSON pointer of the reply text.
//! Secrets are read from the environment variable named by `auth_env` at
//! call time and never stored.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentBackend, BackendError};
use crate::protocol::PromptBundle;
use crate::seeds::StreamRng;

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_pointer() -> String {
    "/choices/0/message/content".to_string()
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    30_000
}

/// One provider endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub name: String,
    /// May contain `{{model}}`.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub rate_limit_per_min: Option<f64>,
    /// JSON body; string leaves `{{model}}`, `{{messages}}` and
    /// `{{temperature}}` are substituted. Defaults to the OpenAI chat shape.
    #[serde(default)]
    pub body_template: Option<Value>,
    /// Header values may contain `{{auth}}`. Defaults to a bearer token when
    /// `auth_env` is set.
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    /// JSON pointer to the reply text in the response body.
    #[serde(default = "default_pointer")]
    pub response_pointer: String,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
}

impl EndpointConfig {
    pub fn new(name: impl Into<String>, url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            name: name.into(),
            url: url.into(),
            model: model.into(),
            auth_env: None,
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            rate_limit_per_min: None,
            body_template: None,
            headers: BTreeMap::new(),
            response_pointer: default_pointer(),
            backoff_ms: default_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(format!("endpoint {}: timeout_s must be > 0", self.name));
        }
        if let Some(r) = self.rate_limit_per_min {
            if !(r.is_finite() && r > 0.0) {
                return Err(format!("endpoint {}: rate_limit_per_min must be > 0", self.name));
            }
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    fn render_body(&self, messages: Value, temperature: f64) -> Value {
        let template = self.body_template.clone().unwrap_or_else(|| {
            serde_json::json!({
                "model": "{{model}}",
                "messages": "{{messages}}",
                "temperature": "{{temperature}}",
            })
        });
        substitute(template, &self.model, &messages, temperature)
    }
}

fn substitute(v: Value, model: &str, messages: &Value, temperature: f64) -> Value {
    match v {
        Value::String(s) => match s.as_str() {
            "{{messages}}" => messages.clone(),
            "{{temperature}}" => serde_json::json!(temperature),
            _ => Value::String(s.replace("{{model}}", model)),
        },
        Value::Array(items) => {
            Value::Array(items.into_iter().map(|i| substitute(i, model, messages, temperature)).collect())
        }
        Value::Object(map) => Value::Object(
            map.into_iter().map(|(k, v)| (k, substitute(v, model, messages, temperature))).collect(),
        ),
        other => other,
    }
}

#[derive(Debug, Deserialize)]
struct EndpointFile {
    #[serde(default)]
    endpoints: Vec<EndpointConfig>,
}

/// Reads a TOML file of `[[endpoints]]` tables.
pub fn load_endpoints(path: &Path) -> Result<Vec<EndpointConfig>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file: EndpointFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    for e in &file.endpoints {
        e.validate()?;
    }
    Ok(file.endpoints)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
}

/// The HTTP layer, replaceable in tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder().build().map_err(|e| e.to_string())?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header("content-type", "application/json")
            .body(body.to_string());
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        };
        let resp = req.send().map_err(classify)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(classify)?;
        Ok(HttpReply { status, body })
    }
}

/// Process-wide cap on in-flight remote requests.
#[derive(Debug)]
pub struct RemoteLimits {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl RemoteLimits {
    pub fn new(max_in_flight: usize) -> Arc<Self> {
        Arc::new(RemoteLimits { max_in_flight: max_in_flight.max(1), in_flight: Mutex::new(0), freed: Condvar::new() })
    }

    /// Waits at most `budget` for a slot.
    fn acquire(self: &Arc<Self>, budget: Duration) -> Option<Permit> {
        let deadline = Instant::now() + budget;
        let mut n = self.in_flight.lock().expect("limits lock");
        while *n >= self.max_in_flight {
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            n = self.freed.wait_timeout(n, deadline - now).expect("limits lock").0;
        }
        *n += 1;
        Some(Permit(Arc::clone(self)))
    }
}

struct Permit(Arc<RemoteLimits>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limits lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Counters for observability and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RemoteStats {
    pub calls: u64,
    pub attempts: u64,
    pub retries: u64,
    /// Attempts used by the most recent call.
    pub last_attempts: u32,
}

pub struct RemoteBackend {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    limits: Arc<RemoteLimits>,
    next_slot: Mutex<Option<Instant>>,
    stats: Mutex<RemoteStats>,
}

impl RemoteBackend {
    pub fn new(config: EndpointConfig, transport: Arc<dyn Transport>, limits: Arc<RemoteLimits>) -> Result<Self, String> {
        config.validate()?;
        Ok(RemoteBackend { config, transport, limits, next_slot: Mutex::new(None), stats: Mutex::new(RemoteStats::default()) })
    }

    pub fn stats(&self) -> RemoteStats {
        *self.stats.lock().expect("stats lock")
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Request body for a prompt, as sent on the wire.
    pub fn request_body(&self, prompt: &PromptBundle, temperature: f64) -> Value {
        let messages = serde_json::to_value(prompt.messages()).expect("messages serialize");
        self.config.render_body(messages, temperature)
    }

    fn headers(&self) -> Result<Vec<(String, String)>, BackendError> {
        let secret = match &self.config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Unavailable(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let mut headers = self.config.headers.clone();
        if headers.is_empty() && secret.is_some() {
            headers.insert("authorization".into(), "Bearer {{auth}}".into());
        }
        Ok(headers
            .into_iter()
            .map(|(k, v)| {
                let v = match &secret {
                    Some(s) => v.replace("{{auth}}", s),
                    None => v,
                };
                (k, v)
            })
            .collect())
    }

    /// Reserves the next request slot under the per-endpoint rate limit.
    /// Returns how long to wait, or `None` if that exceeds `budget`.
    fn reserve_slot(&self, budget: Duration) -> Option<Duration> {
        let Some(rate) = self.config.rate_limit_per_min else {
            return Some(Duration::ZERO);
        };
        let interval = Duration::from_secs_f64(60.0 / rate);
        let now = Instant::now();
        let mut next = self.next_slot.lock().expect("rate lock");
        let slot = next.map_or(now, |n| n.max(now));
        let wait = slot - now;
        if wait > budget {
            return None;
        }
        *next = Some(slot + interval);
        Some(wait)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.config.backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.config.max_backoff_ms))
    }

    fn attempt(&self, url: &str, headers: &[(String, String)], body: &str, attempts: u32) -> Result<String, Attempt> {
        let timeout = self.config.timeout();
        let Some(_permit) = self.limits.acquire(timeout) else {
            return Err(Attempt::Retry(BackendError::Timeout { attempts }));
        };
        match self.reserve_slot(timeout) {
            Some(wait) => std::thread::sleep(wait),
            None => return Err(Attempt::Retry(BackendError::RateLimited { attempts })),
        }
        match self.transport.post_json(url, headers, body, timeout) {
            Ok(HttpReply { status, body }) if (200..300).contains(&status) => {
                let value: Value = serde_json::from_str(&body)
                    .map_err(|e| Attempt::Fatal(BackendError::Malformed(format!("response is not JSON: {e}"))))?;
                value
                    .pointer(&self.config.response_pointer)
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| {
                        Attempt::Fatal(BackendError::Malformed(format!(
                            "no string at {} in response",
                            self.config.response_pointer
                        )))
                    })
            }
            Ok(HttpReply { status: 429, .. }) => Err(Attempt::Retry(BackendError::RateLimited { attempts })),
            Ok(HttpReply { status, .. }) if status >= 500 => {
                Err(Attempt::Retry(BackendError::Server { status, attempts }))
            }
            Ok(HttpReply { status, .. }) => Err(Attempt::Fatal(BackendError::Server { status, attempts })),
            Err(TransportError::Timeout) => Err(Attempt::Retry(BackendError::Timeout { attempts })),
            Err(TransportError::Connect(_)) => Err(Attempt::Retry(BackendError::Server { status: 0, attempts })),
        }
    }

    fn record(&self, attempts: u32) {
        let mut s = self.stats.lock().expect("stats lock");
        s.calls += 1;
        s.attempts += u64::from(attempts);
        s.retries += u64::from(attempts.saturating_sub(1));
        s.last_attempts = attempts;
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl AgentBackend for RemoteBackend {
    fn descriptor(&self) -> &str {
        &self.config.model
    }

    fn respond(&self, prompt: &PromptBundle, temperature: f64, _rng: &mut StreamRng) -> Result<String, BackendError> {
        let url = self.config.url.replace("{{model}}", &self.config.model);
        let headers = self.headers()?;
        let body = self.request_body(prompt, temperature).to_string();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &headers, &body, attempts) {
                Ok(text) => {
                    self.record(attempts);
                    return Ok(text);
                }
                Err(Attempt::Fatal(e)) => {
                    self.record(attempts);
                    return Err(e);
                }
                Err(Attempt::Retry(e)) => {
                    if attempts > self.config.max_retries {
                        self.record(attempts);
                        return Err(e);
                    }
                    std::thread::sleep(self.backoff(attempts - 1));
                }
            }
        }
    }
}
