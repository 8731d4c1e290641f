use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StoreError;

const DEFAULT_SCENARIOS: &str = include_str!("../../data/scenarios.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioType {
    #[serde(rename = "choice_ABC")]
    ChoiceAbc,
    #[serde(rename = "allocation")]
    Allocation,
}

/// A policy scenario as shown to the committee.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPacket {
    pub id: String,
    pub domain: String,
    #[serde(rename = "type")]
    pub kind: ScenarioType,
    /// A/B/C labels for `choice_ABC`; funding lines for `allocation`.
    pub options: Vec<String>,
    pub question: String,
    pub text: String,
}

impl ScenarioPacket {
    /// Text placed in the agent's context.
    pub fn prompt_text(&self) -> String {
        let mut out = format!("{} ({})\nDecision question: {}\n\n{}", self.id, self.domain, self.question, self.text.trim());
        match self.kind {
            ScenarioType::ChoiceAbc => {
                out.push_str("\n\nOptions:");
                for (letter, label) in ["A", "B", "C"].iter().zip(&self.options) {
                    out.push_str(&format!("\n{letter}) {label}"));
                }
            }
            ScenarioType::Allocation => {
                out.push_str("\n\nFunding lines: ");
                out.push_str(&self.options.join(", "));
            }
        }
        out
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("scenario with empty id".into());
        }
        if self.question.trim().is_empty() || self.text.trim().is_empty() {
            return Err(format!("{}: question and text are required", self.id));
        }
        if self.options.iter().any(|o| o.trim().is_empty()) {
            return Err(format!("{}: empty option label", self.id));
        }
        match self.kind {
            ScenarioType::ChoiceAbc if self.options.len() != 3 => Err(format!(
                "{}: choice_ABC needs exactly three options (A, B, C), found {}",
                self.id,
                self.options.len()
            )),
            ScenarioType::Allocation if self.options.len() < 2 => {
                Err(format!("{}: allocation needs at least two funding lines", self.id))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<ScenarioPacket>,
}

/// Parses and validates a TOML file of `[[scenario]]` tables.
pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioPacket>, StoreError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| StoreError::Scenario(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for packet in &file.scenario {
        packet.validate().map_err(StoreError::Scenario)?;
        if !seen.insert(packet.id.as_str()) {
            return Err(StoreError::Scenario(format!("duplicate scenario id {}", packet.id)));
        }
    }
    Ok(file.scenario)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<ScenarioPacket>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    parse_scenarios(&text)
}

/// The bundled twelve-scenario benchmark.
pub fn default_scenarios() -> Vec<ScenarioPacket> {
    parse_scenarios(DEFAULT_SCENARIOS).expect("bundled scenarios are valid")
}
