//! Named experiments over `sinai-core`, their configuration, and the on-disk
//! report layout `<root>/<experiment>/<timestamp>/`.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use serde::Serialize;
use sinai_core::compare::{SampleSet, Verdict};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, String),
    #[error("simulation error: {0}")]
    Sim(String),
}

macro_rules! sim_error {
    ($($t:ty),*) => {$(
        impl From<$t> for LabError {
            fn from(e: $t) -> Self {
                LabError::Sim(e.to_string())
            }
        }
    )*};
}

sim_error!(
    sinai_core::walk::WalkError,
    sinai_core::branching::BranchingError,
    sinai_core::diffusion::DiffusionError,
    sinai_core::compare::CompareError,
    sinai_core::environment::EnvironmentError
);

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(PathBuf::from("<stream>"), e.to_string())
    }
}

/// One verdict-bearing line of a report. Informational checks are reported
/// but do not enter the experiment verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub gating: bool,
    pub detail: String,
    pub data: serde_json::Value,
}

impl Check {
    pub fn new(name: impl Into<String>, verdict: Verdict, detail: impl Into<String>, data: serde_json::Value) -> Self {
        Self { name: name.into(), verdict, gating: true, detail: detail.into(), data }
    }

    pub fn informational(mut self) -> Self {
        self.gating = false;
        self
    }
}

/// Whitespace-separated columns for plotting.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: String,
    pub checks: Vec<Check>,
    pub samples: Vec<SampleSet>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.to_string(), checks: Vec::new(), samples: Vec::new(), tables: Vec::new() }
    }

    pub fn verdict(&self) -> Verdict {
        self.checks.iter().filter(|c| c.gating).fold(Verdict::Pass, |v, c| v.and(c.verdict))
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Process exit code for a verdict.
pub fn exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => 0,
        Verdict::Fail => 1,
        Verdict::Inconclusive => 2,
    }
}
