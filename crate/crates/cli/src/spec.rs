//! Problem specification files: one JSON document describes one
//! reproducible experiment (references, weight, dynamics, solver and
//! oracle/simulation options).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use uotdc_core::gaussian::{GaussianMeasure, Tolerances};
use uotdc_core::udc::{LinearSystem, MassTerm, UdcOptions};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_opt_tol")]
    pub opt_tol: f64,
    #[serde(default)]
    pub mass_term: MassTermSpec,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            opt_tol: default_opt_tol(),
            mass_term: MassTermSpec::default(),
        }
    }
}

fn default_max_iterations() -> usize {
    10_000
}

fn default_opt_tol() -> f64 {
    1e-7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MassTermSpec {
    #[default]
    Psi,
    GammaPsi,
}

impl From<MassTermSpec> for MassTerm {
    fn from(value: MassTermSpec) -> Self {
        match value {
            MassTermSpec::Psi => MassTerm::Psi,
            MassTermSpec::GammaPsi => MassTerm::GammaPsi,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: usize,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
}

fn default_epsilons() -> Vec<f64> {
    vec![0.1, 0.05]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
        }
    }
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub mode: String,
    pub gamma: f64,
    pub alpha: MeasureSpec,
    pub beta: MeasureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
}

pub fn to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::validation(format!("field `{field}` is empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::validation(format!(
            "field `{field}` must be a rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl ProblemSpec {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read spec file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("malformed spec file: {e}")))
    }

    pub fn measure(&self, which: &str) -> Result<GaussianMeasure<f64>, CliError> {
        let spec = match which {
            "alpha" => &self.alpha,
            _ => &self.beta,
        };
        let cov = to_matrix(&spec.cov, &format!("{which}.cov"))?;
        GaussianMeasure::new_reference(spec.mass, DVector::from_vec(spec.mean.clone()), cov)
            .map_err(|e| CliError::validation(format!("invalid reference `{which}`: {e}")))
    }

    pub fn linear_system(&self) -> Result<LinearSystem<f64>, CliError> {
        let sys = self.system.as_ref().ok_or_else(|| {
            CliError::validation("udc spec requires a `system` section".to_string())
        })?;
        let a = to_matrix(&sys.a, "system.a")?;
        let b = to_matrix(&sys.b, "system.b")?;
        LinearSystem::new(a, b, sys.horizon)
            .map_err(|e| CliError::validation(format!("invalid `system`: {e}")))
    }

    pub fn solver(&self) -> SolverSpec {
        self.solver.clone().unwrap_or_default()
    }

    pub fn tolerances(&self) -> Tolerances<f64> {
        let mut tol = Tolerances::default();
        tol.opt_tol = self.solver().opt_tol;
        tol
    }

    pub fn udc_options(&self, mass_term_override: Option<MassTermSpec>) -> UdcOptions<f64> {
        let solver = self.solver();
        UdcOptions {
            tolerances: self.tolerances(),
            max_iterations: solver.max_iterations,
            mass_term: mass_term_override.unwrap_or(solver.mass_term).into(),
        }
    }

    pub fn require_mode(&self, expected: &str) -> Result<(), CliError> {
        if self.mode != expected {
            return Err(CliError::validation(format!(
                "spec mode is `{}`, this command requires `{expected}`",
                self.mode
            )));
        }
        Ok(())
    }
}
