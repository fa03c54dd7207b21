//! Serialized result artifacts: solution.json, oracle.json, sim.json and
//! the CSV side files. Field order is fixed by the struct definitions so a
//! bundle re-loaded and re-emitted is byte-identical.

use serde::{Deserialize, Serialize};
use uotdc_core::uot::SolverReport;

use crate::spec::ProblemSpec;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportOut {
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
}

impl From<&SolverReport> for ReportOut {
    fn from(r: &SolverReport) -> Self {
        // Wall time is intentionally dropped: artifacts are deterministic
        // functions of spec + flags.
        Self {
            iterations: r.iterations,
            final_gradient_norm: r.final_gradient_norm,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureOut {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapOut {
    pub linear: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UotOut {
    pub mass: f64,
    pub subproblem_value: f64,
    pub objective: f64,
    pub marginal1: MeasureOut,
    pub marginal2: MeasureOut,
    pub map: MapOut,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UdcOut {
    /// Optimal mass under the selected mass-term reading.
    pub mass: f64,
    /// The mass under the other reading, recorded alongside.
    pub mass_alternate: f64,
    pub mass_term: String,
    pub subproblem_value: f64,
    pub objective: f64,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
    pub gains: Vec<Vec<Vec<f64>>>,
    pub feedforwards: Vec<Vec<f64>>,
    pub noise_covs: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossCheckOut {
    pub uot_objective: f64,
    pub uot_mass: f64,
    pub relative_objective_gap: f64,
    pub relative_mass_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanMetaOut {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub sigma_vis: f64,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultBundle {
    pub version: String,
    pub mode: String,
    pub input: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uot: Option<UotOut>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub udc: Option<UdcOut>,
    pub report: ReportOut,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<CrossCheckOut>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanMetaOut>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleEpsilonOut {
    pub epsilon: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentGapOut {
    pub mass: f64,
    pub mean: f64,
    pub cov: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub version: String,
    pub closed_form_objective: f64,
    pub epsilons: Vec<OracleEpsilonOut>,
    pub extrapolated_objective: f64,
    pub relative_gap: f64,
    /// Relative gaps between the finest-epsilon plan marginals and the
    /// closed-form marginals.
    pub marginal1_gaps: MomentGapOut,
    pub marginal2_gaps: MomentGapOut,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub version: String,
    pub samples: usize,
    pub seed: u64,
    pub mass: f64,
    pub analytic_control_cost: f64,
    pub empirical_control_cost: f64,
    pub control_cost_se: f64,
    pub worst_mean_z: f64,
    pub worst_cov_z: f64,
    pub control_z: f64,
    pub mean_ok: bool,
    pub cov_ok: bool,
    pub control_cost_ok: bool,
    pub pass: bool,
    pub empirical_means: Vec<Vec<f64>>,
    pub empirical_covs: Vec<Vec<Vec<f64>>>,
}

/// Canonical serialization used for every JSON artifact: pretty-printed
/// with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::internal(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_canonical_json(value)?)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

pub fn load_bundle(path: &std::path::Path) -> Result<ResultBundle, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::validation(format!("cannot read solution file {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("malformed solution file: {e}")))
}
