//! JSON run reports: one document per command execution carrying the full
//! resolved configuration, the result, and the seed that produced it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use warpfit::TestReport;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// RFC 3339 creation time; the only field allowed to differ between
    /// reruns of an identical configuration.
    pub timestamp: String,
    pub version: String,
    pub command: String,
    pub config: ResolvedConfig,
    pub result: CommandResult,
}

/// Every setting after defaults and seed resolution. Fields that do not
/// apply to a command are omitted from the JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResolvedConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_box: Option<Vec<[f64; 2]>>,
    /// Anchored group id; absent when fitting without an anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_group: Option<String>,
    /// Parameters the anchored group is pinned to (the family identity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mn_rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "B")]
    pub b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_out: Option<String>,
    /// Master seed actually used; 0 on the command line means "draw one
    /// from entropy", and the drawn value is what is recorded here.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CommandResult {
    Fit(FitOutput),
    Test(TestReport),
    Barycenter(BarycenterOutput),
    SimulateData(SimulateDataOutput),
    LimitSim(LimitSimOutput),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub groups: Vec<String>,
    /// Per-group parameter vectors, aligned with `groups`.
    pub theta_hat: Vec<Vec<f64>>,
    pub inf_u_n: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Anchored curvature matrix rows; omitted for unequal group sizes,
    /// where the plug-in curvature is not defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_invertible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycenterOutput {
    pub groups: Vec<String>,
    /// (weight, level) pairs of the barycenter quantile function.
    pub atoms: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateDataOutput {
    pub groups: Vec<String>,
    pub n_per_group: usize,
    pub rows: usize,
    pub data_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSimOutput {
    pub draws: usize,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: Vec<QuantilePoint>,
    /// Mean of the squared-bridge term of the decomposition, when the law
    /// carries one (the closed-form sanity anchor is (J-1)/(6J)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_term_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub value: f64,
}

/// Serializes the report as pretty JSON (with trailing newline), writing it
/// to `path` when one is given, and returns the rendered document.
pub fn write_report(report: &Report, path: Option<&Path>) -> Result<String, CliError> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    if let Some(p) = path {
        fs::write(p, &json)?;
    }
    Ok(json)
}

pub fn read_report(path: &Path) -> Result<Report, CliError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
