//! The JSON report written for every discovery run.

use serde::{Deserialize, Serialize};

use crate::orchestrator::{EpochLog, RunConfig, RunResult};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema_version: u32,
    pub system: String,
    pub config: RunConfig,
    /// `found`, `exhausted` or `indeterminate`.
    pub status: String,
    /// Winning expression in the parser's syntax.
    pub expression: Option<String>,
    pub complexity: Option<usize>,
    pub epochs: usize,
    pub wall_time_s: f64,
    #[serde(rename = "max_violation_V")]
    pub max_violation_v: Option<f64>,
    #[serde(rename = "max_violation_LfV")]
    pub max_violation_lfv: Option<f64>,
    /// Counterexamples added to the training pool over the run.
    pub counterexample_count: usize,
    pub per_epoch: Vec<EpochLog>,
}

impl ReportFile {
    pub fn new(config: &RunConfig, r: &RunResult) -> Self {
        ReportFile {
            schema_version: REPORT_SCHEMA_VERSION,
            system: r.system.clone(),
            config: config.clone(),
            status: r.status.as_str().to_string(),
            expression: r.expression.as_ref().map(|e| e.to_string()),
            complexity: r.complexity,
            epochs: r.epochs,
            wall_time_s: r.wall_time_s,
            max_violation_v: r.report.as_ref().and_then(|p| p.max_neg_v),
            max_violation_lfv: r.report.as_ref().and_then(|p| p.max_lie),
            counterexample_count: r.per_epoch.iter().map(|e| e.counterexamples).sum(),
            per_epoch: r.per_epoch.clone(),
        }
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
