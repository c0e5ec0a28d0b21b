//! The JSON file a simulation writes.

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioConfig;
use crate::strategies::{AttackReport, StrategyKind, StrategyParams};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A report plus what is needed to reproduce it: the scenario fingerprint,
/// the resolved parameters and the tool version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReportFile {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub fingerprint: String,
    pub strategy: StrategyKind,
    pub params: StrategyParams,
    pub report: AttackReport,
}

impl AttackReportFile {
    pub fn new(config: &ScenarioConfig, params: StrategyParams, report: AttackReport) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            scenario: config.name.clone(),
            fingerprint: config.fingerprint(),
            strategy: report.strategy,
            params,
            report,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
