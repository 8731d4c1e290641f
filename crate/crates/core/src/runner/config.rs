use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::backends::{ConsensusDynamicsParams, Script};
use crate::protocol::{
    Composition, Condition, Role, DEFAULT_COMMITTEE_SIZE, DEFAULT_MEMORY_WINDOW, DEFAULT_ROUNDS,
    DEFAULT_TARGET_REPLICATES, MIXED_LINEUP, UNIFORM_MODEL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionKind {
    Uniform,
    Mixed,
}

/// How a seat's model is served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Scripted {
        /// Used by seats without an entry in `seats`.
        #[serde(default)]
        script: Option<Script>,
        #[serde(default)]
        seats: Vec<Script>,
    },
    Consensus(ConsensusDynamicsParams),
    Logistic {
        growth: f64,
        x0: f64,
        /// Added to `x0` once per replicate index.
        #[serde(default)]
        replicate_offset: f64,
    },
    Remote {
        /// Endpoint `name` in the endpoints file.
        endpoint: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendTable {
    /// Binding for any model without its own entry.
    #[serde(default)]
    pub default: Option<BackendSpec>,
    #[serde(default)]
    pub models: BTreeMap<String, BackendSpec>,
    /// Optional language-model clerk, recorded next to the tally.
    #[serde(default)]
    pub clerk: Option<BackendSpec>,
    /// TOML file with `[[endpoints]]`, relative to the config file.
    #[serde(default)]
    pub endpoints_file: Option<PathBuf>,
    /// Process-wide cap on concurrent remote requests.
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

fn default_temperatures() -> Vec<f64> {
    vec![0.0]
}
fn default_roles() -> Vec<Toggle> {
    vec![Toggle::On, Toggle::Off]
}
fn default_compositions() -> Vec<CompositionKind> {
    vec![CompositionKind::Uniform, CompositionKind::Mixed]
}
fn default_windows() -> Vec<usize> {
    vec![DEFAULT_MEMORY_WINDOW]
}
fn default_ablations() -> Vec<String> {
    vec!["none".into()]
}
fn default_target() -> u32 {
    DEFAULT_TARGET_REPLICATES
}
fn default_rounds() -> u32 {
    DEFAULT_ROUNDS
}
fn default_size() -> usize {
    DEFAULT_COMMITTEE_SIZE
}
fn default_parallelism() -> usize {
    1
}
fn default_uniform_model() -> String {
    UNIFORM_MODEL.into()
}
fn default_mixed_models() -> Vec<String> {
    MIXED_LINEUP.iter().map(|m| m.to_string()).collect()
}

/// The experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub scenarios: Vec<String>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_roles")]
    pub roles: Vec<Toggle>,
    #[serde(default = "default_compositions")]
    pub compositions: Vec<CompositionKind>,
    #[serde(default = "default_windows")]
    pub memory_windows: Vec<usize>,
    /// Role names, or `"none"` for the unablated committee. Ablations only
    /// apply to conditions with roles on.
    #[serde(default = "default_ablations")]
    pub ablations: Vec<String>,
    #[serde(default = "default_target")]
    pub target_replicates: u32,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_size")]
    pub committee_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub strict_parse: bool,
    #[serde(default = "default_uniform_model")]
    pub uniform_model: String,
    #[serde(default = "default_mixed_models")]
    pub mixed_models: Vec<String>,
    /// Scenario packets; the bundled set when absent. Relative to the config file.
    #[serde(default)]
    pub scenario_file: Option<PathBuf>,
    #[serde(default)]
    pub backends: BackendTable,
}

impl MatrixConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        let cfg: MatrixConfig = toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.scenario_file);
        resolve(&mut cfg.backends.endpoints_file);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let empty = |axis: &str| Err(RunnerError::Config(format!("axis `{axis}` is empty")));
        if self.scenarios.is_empty() {
            return empty("scenarios");
        }
        if self.temperatures.is_empty() {
            return empty("temperatures");
        }
        if self.roles.is_empty() {
            return empty("roles");
        }
        if self.compositions.is_empty() {
            return empty("compositions");
        }
        if self.memory_windows.is_empty() {
            return empty("memory_windows");
        }
        if self.ablations.is_empty() {
            return empty("ablations");
        }
        if self.parallelism == 0 {
            return Err(RunnerError::Config("parallelism must be at least 1".into()));
        }
        if self.target_replicates == 0 {
            return Err(RunnerError::Config("target_replicates must be at least 1".into()));
        }
        if self.temperatures.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(RunnerError::Config("temperatures must be finite and >= 0".into()));
        }
        self.ablation_roles()?;
        Ok(())
    }

    fn ablation_roles(&self) -> Result<Vec<Option<Role>>, RunnerError> {
        self.ablations
            .iter()
            .map(|a| {
                if a.eq_ignore_ascii_case("none") {
                    Ok(None)
                } else {
                    a.parse::<Role>().map(Some).map_err(|e| RunnerError::Config(e.to_string()))
                }
            })
            .collect()
    }

    /// Every condition of the matrix in expansion order.
    pub fn conditions(&self) -> Result<Vec<Condition>, RunnerError> {
        self.validate()?;
        let ablations = self.ablation_roles()?;
        let mut out = Vec::new();
        for scenario in &self.scenarios {
            for &temperature in &self.temperatures {
                for &roles in &self.roles {
                    for &composition in &self.compositions {
                        for &k in &self.memory_windows {
                            for &ablation in &ablations {
                                let roles_enabled = roles == Toggle::On;
                                if ablation.is_some() && !roles_enabled {
                                    continue;
                                }
                                let composition = match composition {
                                    CompositionKind::Uniform => {
                                        Composition::Uniform { model: self.uniform_model.clone() }
                                    }
                                    CompositionKind::Mixed => Composition::Mixed { models: self.mixed_models.clone() },
                                };
                                let mut c = Condition::new(scenario.clone(), temperature, roles_enabled, composition);
                                c.committee_size = self.committee_size;
                                c.memory_window = k;
                                c.ablation = ablation;
                                c.rounds = self.rounds;
                                c.target_replicates = self.target_replicates;
                                c.validate().map_err(|e| RunnerError::Config(format!("{}: {e}", c.key())))?;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
