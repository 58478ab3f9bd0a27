use serde::{Deserialize, Serialize};

/// A reported number. Non-finite values are stored as `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

/// Outcome of one tolerance from the config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Per-experiment results consumed by the report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub index: usize,
    pub kind: String,
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ExperimentSummary {
    pub fn new(index: usize, kind: &str) -> Self {
        Self { index, kind: kind.to_string(), ..Self::default() }
    }

    pub fn value(&mut self, name: impl Into<String>, value: f64) {
        self.estimates.push(Estimate { name: name.into(), value: finite(value), stderr: None });
    }

    pub fn with_stderr(&mut self, name: impl Into<String>, value: f64, stderr: f64) {
        self.estimates.push(Estimate { name: name.into(), value: finite(value), stderr: finite(stderr) });
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}
