//! Structured reports printed by the commands.

use std::path::Path;

use compsynth_core::analysis::{Estimate, PercentileRow};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config_sha256: String,
    pub subsystems: usize,
    pub horizon: usize,
    pub formula: String,
    pub reward: String,
    pub model_known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub samples: u64,
}

impl From<Estimate> for Interval {
    fn from(e: Estimate) -> Self {
        Interval {
            p: e.p,
            lo: e.lo,
            hi: e.hi,
            samples: e.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnClass {
    pub subsystems: Vec<usize>,
    pub file: String,
    pub episodes: u64,
    pub stages: usize,
    pub cells: usize,
    pub external_inputs: usize,
    pub internal_actions: usize,
    pub state_input_pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub metadata: Metadata,
    #[serde(rename = "class")]
    pub classes: Vec<LearnClass>,
}

/// Per-class entry of the bound report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemBound {
    pub subsystems: Vec<usize>,
    pub delta: f64,
    pub mu: f64,
    pub lipschitz_x: f64,
    pub lipschitz_w: f64,
    pub epsilon: f64,
    /// Exact satisfaction probability of the learned controller against the
    /// worst environment, when the model is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_plus: Option<f64>,
    /// Learned controller against the learned environment, sampled on the
    /// abstract game.
    pub p_plus_sampled: Interval,
    /// Probability entering the bound.
    pub p_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBound {
    pub subsystems: usize,
    /// `oracle` or `sampled_lower`.
    pub source: String,
    pub epsilon: f64,
    pub penalty: f64,
    pub p_low: f64,
    pub vacuous: bool,
    /// The bound recomputed from the sampled per-subsystem point estimates.
    pub p_low_sampled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub metadata: Metadata,
    #[serde(rename = "subsystem")]
    pub classes: Vec<SubsystemBound>,
    pub network: NetworkBound,
    pub p_sampled: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub metadata: Metadata,
    pub p_sampled: Interval,
    pub percentile_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleClass {
    pub subsystems: Vec<usize>,
    /// Max-min satisfaction probability of the abstract game.
    pub optimal: f64,
    /// Learned controller against the exact worst case, when a table exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learned: Option<f64>,
    pub values_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub metadata: Metadata,
    #[serde(rename = "class")]
    pub classes: Vec<OracleClass>,
}

pub fn to_text<T: Serialize>(report: &T) -> String {
    toml::to_string(report).expect("reports serialize")
}

pub fn write_percentiles(path: &Path, rows: &[PercentileRow]) -> CliResult<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => CliError::unwritable(path, e),
        other => CliError::Other(anyhow::anyhow!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["time", "subsystem", "percentile", "value"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.time.to_string(),
            r.subsystem.to_string(),
            r.percentile.to_string(),
            r.value.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::unwritable(path, e))
}
