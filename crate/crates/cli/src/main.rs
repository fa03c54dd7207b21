//! Command-line front end for the unbalanced transport and density control
//! solvers. Each subcommand reads a JSON problem spec and writes
//! deterministic JSON/CSV artifacts into an output directory.
//!
//! Exit codes: 0 success, 2 invalid input, 3 solver or check failure
//! (partial results are still written), 4 infeasible dynamics.

mod bundle;
mod spec;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use uotdc_core::error::Error as CoreError;
use uotdc_core::oracle::{discretize, extrapolate_to_zero, solve_discrete_uot, weighted_moments};
use uotdc_core::sim::{analytic_control_cost, check_moments, simulate, SimConfig};
use uotdc_core::udc::{AffinePolicy, MassTerm, UdcProblem, UdcSolution};
use uotdc_core::uot::{UotProblem, UotSolution};

use bundle::{
    load_bundle, write_json, CrossCheckOut, MapOut, MeasureOut, MomentGapOut, OracleEpsilonOut,
    OracleReport, PlanMetaOut, ReportOut, ResultBundle, SimReport, UdcOut, UotOut,
};
use spec::{from_matrix, to_matrix, MassTermSpec, ProblemSpec};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: String) -> Self {
        Self { code: 2, message }
    }

    pub fn solver(message: String) -> Self {
        Self { code: 3, message }
    }

    pub fn internal(message: String) -> Self {
        Self { code: 3, message }
    }

    /// Core errors raised while constructing a problem are input mistakes,
    /// except infeasible dynamics which get their own exit code.
    pub fn from_construction(e: CoreError) -> Self {
        match e {
            CoreError::InfeasibleDynamics { .. } => Self {
                code: 4,
                message: e.to_string(),
            },
            _ => Self::validation(e.to_string()),
        }
    }

    /// Core errors raised during a solve.
    pub fn from_solve(e: CoreError) -> Self {
        match e {
            CoreError::InfeasibleDynamics { .. } => Self {
                code: 4,
                message: e.to_string(),
            },
            _ => Self::solver(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "uotdc", version, about = "Gaussian unbalanced transport and density control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a static unbalanced transport problem between Gaussian references.
    Uot {
        /// Path to a JSON problem spec with mode "uot".
        spec: PathBuf,
        /// Rasterize the 1-D entropic plan stand-in over [LO, HI] with N
        /// points per axis and write plan.csv.
        #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["LO", "HI", "N"])]
        plan_grid: Option<Vec<String>>,
        /// Directory for solution.json and side files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Solve an unbalanced density control problem over a linear system.
    Udc {
        /// Path to a JSON problem spec with mode "udc".
        spec: PathBuf,
        /// Cross-check against another solver; only "uot" is supported and
        /// is meaningful for one-step identity dynamics.
        #[arg(long)]
        cross_check: Option<String>,
        /// Override the mass-term reading from the spec.
        #[arg(long, value_enum)]
        mass_term: Option<MassTermSpec>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compare the closed-form transport solution against a grid oracle.
    Oracle {
        /// Path to a JSON problem spec with mode "uot" and an `oracle` section.
        spec: PathBuf,
        /// Comma-separated entropic regularization values, largest first.
        #[arg(long)]
        epsilon_list: Option<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Monte Carlo validation of a solved density control policy.
    Simulate {
        /// Path to the original JSON problem spec.
        spec: PathBuf,
        /// solution.json produced by the `udc` subcommand.
        #[arg(long)]
        solution: PathBuf,
        /// Override the RNG seed from the spec.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trajectory count from the spec.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("UOT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Uot {
            spec,
            plan_grid,
            out_dir,
        } => run_uot(&spec, plan_grid.as_deref(), &out_dir),
        Command::Udc {
            spec,
            cross_check,
            mass_term,
            out_dir,
        } => run_udc(&spec, cross_check.as_deref(), mass_term, &out_dir),
        Command::Oracle {
            spec,
            epsilon_list,
            out_dir,
        } => run_oracle(&spec, epsilon_list.as_deref(), &out_dir),
        Command::Simulate {
            spec,
            solution,
            seed,
            samples,
            out_dir,
        } => run_simulate(&spec, &solution, seed, samples, &out_dir),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn ensure_out_dir(out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", out_dir.display())))
}

fn measure_out(m: &uotdc_core::gaussian::GaussianMeasure<f64>) -> MeasureOut {
    MeasureOut {
        mass: m.mass(),
        mean: m.mean().iter().copied().collect(),
        cov: from_matrix(m.cov()),
    }
}

fn solve_uot(problem: &UotProblem<f64>, spec: &ProblemSpec) -> Result<UotSolution<f64>, CliError> {
    problem
        .solve(&spec.tolerances(), spec.solver().max_iterations)
        .map_err(CliError::from_solve)
}

fn uot_out(solution: &UotSolution<f64>) -> UotOut {
    UotOut {
        mass: solution.mass,
        subproblem_value: solution.subproblem_value,
        objective: solution.objective,
        marginal1: measure_out(&solution.marginal1),
        marginal2: measure_out(&solution.marginal2),
        map: MapOut {
            linear: from_matrix(&solution.map.linear),
            offset: solution.map.offset.iter().copied().collect(),
        },
    }
}

fn run_uot(
    spec_path: &Path,
    plan_grid: Option<&[String]>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let spec = ProblemSpec::load(spec_path)?;
    spec.require_mode("uot")?;
    ensure_out_dir(out_dir)?;
    let problem = UotProblem::new(spec.measure("alpha")?, spec.measure("beta")?, spec.gamma)
        .map_err(CliError::from_construction)?;
    let solution = solve_uot(&problem, &spec)?;

    let plan = match plan_grid {
        Some(args) => Some(write_plan(&solution, args, out_dir)?),
        None => None,
    };

    let bundle = ResultBundle {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: "uot".to_string(),
        input: spec,
        uot: Some(uot_out(&solution)),
        udc: None,
        report: ReportOut::from(&solution.report),
        cross_check: None,
        plan,
    };
    write_json(&out_dir.join("solution.json"), &bundle)?;
    if !solution.report.converged {
        return Err(CliError::solver(
            "transport solve did not converge; partial solution.json written".to_string(),
        ));
    }
    println!("uot: mass {} objective {}", solution.mass, solution.objective);
    Ok(())
}

fn write_plan(
    solution: &UotSolution<f64>,
    args: &[String],
    out_dir: &Path,
) -> Result<PlanMetaOut, CliError> {
    let parse = |i: usize, name: &str| -> Result<f64, CliError> {
        args[i]
            .parse::<f64>()
            .map_err(|_| CliError::validation(format!("--plan-grid {name} must be a number")))
    };
    let lo = parse(0, "LO")?;
    let hi = parse(1, "HI")?;
    let n = args[2]
        .parse::<usize>()
        .map_err(|_| CliError::validation("--plan-grid N must be a positive integer".to_string()))?;
    let raster = solution
        .rasterize_plan(lo, hi, n, 0.25)
        .map_err(CliError::from_construction)?;
    let path = out_dir.join("plan.csv");
    let mut text = String::from("x1,x2,density\n");
    for (i, &x1) in raster.coords.iter().enumerate() {
        for (j, &x2) in raster.coords.iter().enumerate() {
            text.push_str(&format!("{x1},{x2},{}\n", raster.density[(i, j)]));
        }
    }
    std::fs::write(&path, text)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))?;
    Ok(PlanMetaOut {
        lo,
        hi,
        n,
        sigma_vis: raster.sigma_vis,
        path: "plan.csv".to_string(),
    })
}

fn run_udc(
    spec_path: &Path,
    cross_check: Option<&str>,
    mass_term: Option<MassTermSpec>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let spec = ProblemSpec::load(spec_path)?;
    spec.require_mode("udc")?;
    ensure_out_dir(out_dir)?;
    let system = spec.linear_system()?;
    let alpha = spec.measure("alpha")?;
    let beta = spec.measure("beta")?;
    let problem = UdcProblem::new(system, alpha.clone(), beta.clone(), spec.gamma)
        .map_err(CliError::from_construction)?;
    let options = spec.udc_options(mass_term);
    let solution = problem.solve(&options).map_err(CliError::from_solve)?;

    let (term_name, alternate) = match options.mass_term {
        MassTerm::Psi => (
            "psi",
            problem.mass_star(solution.subproblem_value, MassTerm::GammaPsi),
        ),
        MassTerm::GammaPsi => (
            "gamma-psi",
            problem.mass_star(solution.subproblem_value, MassTerm::Psi),
        ),
    };

    write_trajectory_csv(&solution, &out_dir.join("trajectory.csv"))?;

    let cross = match cross_check {
        Some("uot") => Some(cross_check_uot(&spec, &solution)?),
        Some(other) => {
            return Err(CliError::validation(format!(
                "unknown cross-check target `{other}`; only `uot` is supported"
            )))
        }
        None => None,
    };

    let udc = UdcOut {
        mass: solution.mass,
        mass_alternate: alternate,
        mass_term: term_name.to_string(),
        subproblem_value: solution.subproblem_value,
        objective: solution.objective,
        means: solution
            .trajectory
            .means
            .iter()
            .map(|m| m.iter().copied().collect())
            .collect(),
        covs: solution.trajectory.covs.iter().map(from_matrix).collect(),
        gains: solution.policy.gains.iter().map(from_matrix).collect(),
        feedforwards: solution
            .policy
            .feedforwards
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect(),
        noise_covs: solution.policy.noise_covs.iter().map(from_matrix).collect(),
    };
    let bundle = ResultBundle {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: "udc".to_string(),
        input: spec,
        uot: None,
        udc: Some(udc),
        report: ReportOut::from(&solution.report),
        cross_check: cross,
        plan: None,
    };
    write_json(&out_dir.join("solution.json"), &bundle)?;
    if !solution.report.converged {
        return Err(CliError::solver(
            "covariance program did not converge; partial solution.json written".to_string(),
        ));
    }
    println!("udc: mass {} objective {}", solution.mass, solution.objective);
    Ok(())
}

fn cross_check_uot(
    spec: &ProblemSpec,
    solution: &UdcSolution<f64>,
) -> Result<CrossCheckOut, CliError> {
    let problem = UotProblem::new(spec.measure("alpha")?, spec.measure("beta")?, spec.gamma)
        .map_err(CliError::from_construction)?;
    let uot = solve_uot(&problem, spec)?;
    let denom_obj = uot.objective.abs().max(1e-12);
    let denom_mass = uot.mass.abs().max(1e-12);
    Ok(CrossCheckOut {
        uot_objective: uot.objective,
        uot_mass: uot.mass,
        relative_objective_gap: (solution.objective - uot.objective).abs() / denom_obj,
        relative_mass_gap: (solution.mass - uot.mass).abs() / denom_mass,
    })
}

/// One row per stage: state mean and covariance entries, then feedforward
/// and injected-noise trace (empty in the terminal row, which has no control).
fn write_trajectory_csv(solution: &UdcSolution<f64>, path: &Path) -> Result<(), CliError> {
    let t = solution.trajectory.means.len();
    let d = solution.trajectory.means[0].len();
    let p = solution.policy.feedforwards[0].len();
    let mut header = String::from("k");
    for i in 0..d {
        header.push_str(&format!(",m{i}"));
    }
    for i in 0..d {
        for j in 0..d {
            header.push_str(&format!(",sigma{i}{j}"));
        }
    }
    for i in 0..p {
        header.push_str(&format!(",v{i}"));
    }
    header.push_str(",trace_sigma_u\n");
    let mut text = header;
    for k in 0..t {
        let mut row = format!("{}", k + 1);
        for i in 0..d {
            row.push_str(&format!(",{}", solution.trajectory.means[k][i]));
        }
        for i in 0..d {
            for j in 0..d {
                row.push_str(&format!(",{}", solution.trajectory.covs[k][(i, j)]));
            }
        }
        if k < t - 1 {
            for i in 0..p {
                row.push_str(&format!(",{}", solution.policy.feedforwards[k][i]));
            }
            row.push_str(&format!(",{}", solution.policy.noise_covs[k].trace()));
        } else {
            for _ in 0..p + 1 {
                row.push(',');
            }
        }
        row.push('\n');
        text.push_str(&row);
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn run_oracle(
    spec_path: &Path,
    epsilon_list: Option<&str>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let spec = ProblemSpec::load(spec_path)?;
    spec.require_mode("uot")?;
    ensure_out_dir(out_dir)?;
    let oracle = spec
        .oracle
        .clone()
        .ok_or_else(|| CliError::validation("oracle spec requires an `oracle` section".into()))?;
    let mut epsilons = match epsilon_list {
        Some(text) => {
            let parsed: Result<Vec<f64>, _> =
                text.split(',').map(|s| s.trim().parse::<f64>()).collect();
            parsed.map_err(|_| {
                CliError::validation("--epsilon-list must be comma-separated numbers".into())
            })?
        }
        None => oracle.epsilons.clone(),
    };
    if epsilons.is_empty() || epsilons.iter().any(|&e| e <= 0.0) {
        return Err(CliError::validation(
            "epsilon list must contain positive values".into(),
        ));
    }
    epsilons.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let alpha = spec.measure("alpha")?;
    let beta = spec.measure("beta")?;
    let problem =
        UotProblem::new(alpha.clone(), beta.clone(), spec.gamma).map_err(CliError::from_construction)?;
    let closed = solve_uot(&problem, &spec)?;

    let lo = DVector::from_vec(oracle.lo.clone());
    let hi = DVector::from_vec(oracle.hi.clone());
    let grid_a = discretize(&alpha, &lo, &hi, oracle.n).map_err(CliError::from_construction)?;
    let grid_b = discretize(&beta, &lo, &hi, oracle.n).map_err(CliError::from_construction)?;

    let mut eps_out = Vec::new();
    let mut objective_samples = Vec::new();
    // Per-epsilon marginal moments so the entropic O(epsilon) bias can be
    // extrapolated out of the moment comparison as well.
    let mut moment_samples: Vec<[Vec<f64>; 2]> = Vec::new();
    for &eps in &epsilons {
        let (plan, report) =
            solve_discrete_uot(&grid_a, &grid_b, spec.gamma, eps, 200_000)
                .map_err(CliError::from_solve)?;
        objective_samples.push((eps, report.objective));
        let mut per_side = Vec::new();
        for (grid, weights) in [(&grid_a, plan.marginal1()), (&grid_b, plan.marginal2())] {
            let (mass, mean, cov) =
                weighted_moments(grid.points(), &weights).map_err(CliError::from_solve)?;
            let mut flat = vec![mass];
            flat.extend(mean.iter().copied());
            flat.extend(cov.iter().copied());
            per_side.push(flat);
        }
        moment_samples.push([per_side[0].clone(), per_side[1].clone()]);
        eps_out.push(OracleEpsilonOut {
            epsilon: eps,
            objective: report.objective,
            iterations: report.iterations,
            converged: report.converged,
        });
    }

    let extrapolated = extrapolate_scalar(&objective_samples)?;
    let denom = closed.objective.abs().max(1e-12);
    let relative_gap = (extrapolated - closed.objective).abs() / denom;

    let closed_marginals = [&closed.marginal1, &closed.marginal2];
    let mut gaps = Vec::new();
    for side in 0..2 {
        let len = moment_samples[0][side].len();
        let mut extr = Vec::with_capacity(len);
        for idx in 0..len {
            let samples: Vec<(f64, f64)> = epsilons
                .iter()
                .zip(&moment_samples)
                .map(|(&e, m)| (e, m[side][idx]))
                .collect();
            extr.push(extrapolate_scalar(&samples)?);
        }
        gaps.push(moment_gaps(&extr, closed_marginals[side]));
    }

    let report = OracleReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        closed_form_objective: closed.objective,
        epsilons: eps_out,
        extrapolated_objective: extrapolated,
        relative_gap,
        marginal1_gaps: gaps[0].clone(),
        marginal2_gaps: gaps[1].clone(),
    };
    write_json(&out_dir.join("oracle.json"), &report)?;
    println!(
        "oracle: closed-form {} extrapolated {} relative gap {}",
        closed.objective, extrapolated, relative_gap
    );
    Ok(())
}

fn extrapolate_scalar(samples: &[(f64, f64)]) -> Result<f64, CliError> {
    if samples.len() < 2 {
        return Ok(samples[0].1);
    }
    extrapolate_to_zero(samples).map_err(CliError::from_solve)
}

fn moment_gaps(flat: &[f64], closed: &uotdc_core::gaussian::GaussianMeasure<f64>) -> MomentGapOut {
    let d = closed.dim();
    let mass = flat[0];
    let mean = DVector::from_column_slice(&flat[1..1 + d]);
    let cov = DMatrix::from_column_slice(d, d, &flat[1 + d..]);
    MomentGapOut {
        mass: (mass - closed.mass()).abs() / closed.mass().abs().max(1e-12),
        mean: (&mean - closed.mean()).norm() / closed.mean().norm().max(1e-12),
        cov: (&cov - closed.cov()).norm() / closed.cov().norm().max(1e-12),
    }
}

fn run_simulate(
    spec_path: &Path,
    solution_path: &Path,
    seed: Option<u64>,
    samples: Option<usize>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let spec = ProblemSpec::load(spec_path)?;
    spec.require_mode("udc")?;
    ensure_out_dir(out_dir)?;
    let saved = load_bundle(solution_path)?;
    let udc = saved
        .udc
        .as_ref()
        .ok_or_else(|| CliError::validation("solution file has no udc section".into()))?;
    let system = spec.linear_system()?;
    let t = system.horizon();
    if udc.means.len() != t {
        return Err(CliError::validation(format!(
            "solution trajectory has {} stages but the spec horizon is {t}",
            udc.means.len()
        )));
    }

    let mut gains = Vec::with_capacity(t - 1);
    let mut noise_covs = Vec::with_capacity(t - 1);
    for k in 0..t - 1 {
        gains.push(to_matrix(&udc.gains[k], "gains")?);
        noise_covs.push(to_matrix(&udc.noise_covs[k], "noise_covs")?);
    }
    let policy = AffinePolicy {
        gains,
        feedforwards: udc
            .feedforwards
            .iter()
            .map(|v| DVector::from_vec(v.clone()))
            .collect(),
        noise_covs,
        means: udc
            .means
            .iter()
            .map(|v| DVector::from_vec(v.clone()))
            .collect(),
    };
    policy
        .validate(&system)
        .map_err(CliError::from_construction)?;

    let initial_mean = DVector::from_vec(udc.means[0].clone());
    let initial_cov = to_matrix(&udc.covs[0], "covs")?;
    let exact = uotdc_core::udc::propagate(&system, &initial_mean, &initial_cov, &policy)
        .map_err(CliError::from_solve)?;

    let sim_spec = spec.sim.clone().unwrap_or_default();
    let config = SimConfig {
        sample_count: samples.unwrap_or(sim_spec.samples),
        seed: seed.unwrap_or(sim_spec.seed),
        record_controls: false,
    };
    let empirical = simulate(&system, &initial_mean, &initial_cov, &policy, &config)
        .map_err(CliError::from_solve)?;
    let analytic = analytic_control_cost(&system, &exact, &policy);
    let check = check_moments(&empirical, &exact, analytic);

    let report = SimReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        samples: config.sample_count,
        seed: config.seed,
        mass: udc.mass,
        analytic_control_cost: analytic,
        empirical_control_cost: empirical.total_control_cost,
        control_cost_se: empirical.control_cost_se,
        worst_mean_z: check.worst_mean_z,
        worst_cov_z: check.worst_cov_z,
        control_z: check.control_z,
        mean_ok: check.mean_ok,
        cov_ok: check.cov_ok,
        control_cost_ok: check.control_cost_ok,
        pass: check.pass(),
        empirical_means: empirical
            .means
            .iter()
            .map(|m| m.iter().copied().collect())
            .collect(),
        empirical_covs: empirical.covs.iter().map(from_matrix).collect(),
    };
    write_json(&out_dir.join("sim.json"), &report)?;
    if !check.pass() {
        return Err(CliError::solver(format!(
            "simulation disagrees with the solved moments (mean z {:.2}, cov z {:.2}, cost z {:.2}); sim.json written",
            check.worst_mean_z, check.worst_cov_z, check.control_z
        )));
    }
    println!(
        "simulate: {} trajectories, worst mean z {:.2}, worst cov z {:.2}, cost z {:.2}",
        config.sample_count, check.worst_mean_z, check.worst_cov_z, check.control_z
    );
    Ok(())
}
