//! Monte Carlo rollout of Gaussian-affine policies with deterministic,
//! per-trajectory random substreams, plus empirical moment checks against
//! the exact propagated moments.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gaussian::Tolerances;
use crate::linalg;
use crate::udc::{AffinePolicy, LinearSystem, MomentTrajectory};
use crate::{s, Scalar};

/// Simulation configuration. The same `(seed, sample_count)` pair always
/// produces bit-identical trajectories, independent of iteration order,
/// because each trajectory draws from its own ChaCha stream.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub record_controls: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_count: 10_000,
            seed: 0,
            record_controls: false,
        }
    }
}

/// Per-step empirical moments and control costs of a batch of rollouts.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
    pub mean_sq_control: Vec<T>,
    pub total_control_cost: T,
    pub control_cost_se: T,
    pub sample_count: usize,
    /// Recorded controls per trajectory (step-major), empty unless requested.
    pub controls: Vec<Vec<DVector<T>>>,
}

fn factor_psd<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let (q, vals) = linalg::sym_eigen(m);
    let mapped = DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| if v > T::zero() { v.sqrt() } else { T::zero() }),
    );
    q * DMatrix::from_diagonal(&mapped)
}

fn draw_standard<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> DVector<T> {
    DVector::from_iterator(n, (0..n).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        s::<T>(z)
    }))
}

/// Rolls out `config.sample_count` trajectories of the closed-loop system
/// and returns empirical moments and control costs.
pub fn simulate<T: Scalar>(
    system: &LinearSystem<T>,
    initial_mean: &DVector<T>,
    initial_cov: &DMatrix<T>,
    policy: &AffinePolicy<T>,
    config: &SimConfig,
) -> Result<EmpiricalMoments<T>> {
    policy.validate(system)?;
    let t = system.horizon();
    let (d, p) = (system.state_dim(), system.input_dim());
    let a = system.state_matrix();
    let b = system.input_matrix();
    let n = config.sample_count;
    let nf = s::<T>(n as f64);

    let init_factor = factor_psd(&linalg::symmetrize(initial_cov));
    let noise_factors: Vec<DMatrix<T>> = policy
        .noise_covs
        .iter()
        .map(|c| factor_psd(&linalg::symmetrize(c)))
        .collect();

    let mut sum_x = vec![DVector::<T>::zeros(d); t];
    let mut sum_xx = vec![DMatrix::<T>::zeros(d, d); t];
    let mut sum_sq_u = vec![T::zero(); t - 1];
    let mut cost_sum = T::zero();
    let mut cost_sq_sum = T::zero();
    let mut controls = Vec::new();

    for traj in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(traj as u64);
        let mut x = initial_mean + &init_factor * draw_standard::<T>(&mut rng, d);
        let mut cost = T::zero();
        let mut rec = if config.record_controls {
            Vec::with_capacity(t - 1)
        } else {
            Vec::new()
        };
        for k in 0..t {
            sum_x[k] += &x;
            sum_xx[k] += &x * x.transpose();
            if k == t - 1 {
                break;
            }
            let u = &policy.gains[k] * (&x - &policy.means[k])
                + &policy.feedforwards[k]
                + &noise_factors[k] * draw_standard::<T>(&mut rng, p);
            let usq = u.norm_squared();
            sum_sq_u[k] += usq;
            cost += usq;
            if config.record_controls {
                rec.push(u.clone());
            }
            x = a * &x + b * &u;
        }
        cost_sum += cost;
        cost_sq_sum += cost * cost;
        if config.record_controls {
            controls.push(rec);
        }
    }

    let means: Vec<DVector<T>> = sum_x.iter().map(|v| v / nf).collect();
    let covs: Vec<DMatrix<T>> = sum_xx
        .iter()
        .zip(&means)
        .map(|(sxx, m)| {
            let raw = sxx / nf - m * m.transpose();
            linalg::symmetrize(&(raw * (nf / (nf - T::one()))))
        })
        .collect();
    let mean_cost = cost_sum / nf;
    let var_cost = ((cost_sq_sum / nf - mean_cost * mean_cost) * (nf / (nf - T::one())))
        .max(T::zero());
    Ok(EmpiricalMoments {
        means,
        covs,
        mean_sq_control: sum_sq_u.iter().map(|&v| v / nf).collect(),
        total_control_cost: mean_cost,
        control_cost_se: (var_cost / nf).sqrt(),
        sample_count: n,
        controls,
    })
}

/// Exact expected total control cost `Σ E‖u_k‖²` under the policy, given the
/// exact moment trajectory.
pub fn analytic_control_cost<T: Scalar>(
    system: &LinearSystem<T>,
    trajectory: &MomentTrajectory<T>,
    policy: &AffinePolicy<T>,
) -> T {
    let t = system.horizon();
    let mut total = T::zero();
    for k in 0..t - 1 {
        let u_mean =
            &policy.gains[k] * (&trajectory.means[k] - &policy.means[k]) + &policy.feedforwards[k];
        total += u_mean.norm_squared()
            + (&policy.gains[k] * &trajectory.covs[k] * policy.gains[k].transpose()).trace()
            + policy.noise_covs[k].trace();
    }
    total
}

/// Result of comparing empirical moments against exact ones with a
/// four-standard-error tolerance.
#[derive(Debug, Clone)]
pub struct MomentCheck {
    pub mean_ok: bool,
    pub cov_ok: bool,
    pub control_cost_ok: bool,
    pub worst_mean_z: f64,
    pub worst_cov_z: f64,
    pub control_z: f64,
}

impl MomentCheck {
    pub fn pass(&self) -> bool {
        self.mean_ok && self.cov_ok && self.control_cost_ok
    }
}

/// Checks empirical against exact moments: entrywise mean deviations against
/// `4·√(Σ_ii/N)`, covariance deviations against `4·√((Σ_ii Σ_jj + Σ_ij²)/N)`,
/// and total control cost against four empirical standard errors.
pub fn check_moments<T: Scalar>(
    empirical: &EmpiricalMoments<T>,
    exact: &MomentTrajectory<T>,
    analytic_cost: T,
) -> MomentCheck {
    let n = empirical.sample_count as f64;
    let mut worst_mean_z = 0.0f64;
    let mut worst_cov_z = 0.0f64;
    for (k, (m_hat, m)) in empirical.means.iter().zip(&exact.means).enumerate() {
        let sig = &exact.covs[k];
        for i in 0..m.len() {
            let se = (sig[(i, i)].to_f64().unwrap_or(f64::NAN) / n).sqrt().max(1e-300);
            let z = (m_hat[i] - m[i]).to_f64().unwrap_or(f64::NAN).abs() / se;
            worst_mean_z = worst_mean_z.max(z);
        }
        for i in 0..m.len() {
            for j in i..m.len() {
                let sii = sig[(i, i)].to_f64().unwrap_or(f64::NAN);
                let sjj = sig[(j, j)].to_f64().unwrap_or(f64::NAN);
                let sij = sig[(i, j)].to_f64().unwrap_or(f64::NAN);
                let se = ((sii * sjj + sij * sij) / n).sqrt().max(1e-300);
                let z = (empirical.covs[k][(i, j)] - sig[(i, j)])
                    .to_f64()
                    .unwrap_or(f64::NAN)
                    .abs()
                    / se;
                worst_cov_z = worst_cov_z.max(z);
            }
        }
    }
    let se = empirical.control_cost_se.to_f64().unwrap_or(f64::NAN).max(1e-300);
    let control_z = (empirical.total_control_cost - analytic_cost)
        .to_f64()
        .unwrap_or(f64::NAN)
        .abs()
        / se;
    MomentCheck {
        mean_ok: worst_mean_z <= 4.0,
        cov_ok: worst_cov_z <= 4.0,
        control_cost_ok: control_z <= 4.0,
        worst_mean_z,
        worst_cov_z,
        control_z,
    }
}

/// Empirical UDC objective: `c·(MC control cost) + γ(KL(c·N̂_1‖α) + KL(c·N̂_T‖β))`
/// using Gaussian fits of the first and last empirical moments.
pub fn empirical_objective<T: Scalar>(
    empirical: &EmpiricalMoments<T>,
    mass: T,
    alpha: &crate::gaussian::GaussianMeasure<T>,
    beta: &crate::gaussian::GaussianMeasure<T>,
    gamma: T,
) -> Result<T> {
    let t = empirical.means.len();
    let tol = Tolerances::<T>::default();
    let fit_first = crate::gaussian::GaussianMeasure::new(
        mass,
        empirical.means[0].clone(),
        linalg::clip_spd(&empirical.covs[0], tol.eig_clip),
    )?;
    let fit_last = crate::gaussian::GaussianMeasure::new(
        mass,
        empirical.means[t - 1].clone(),
        linalg::clip_spd(&empirical.covs[t - 1], tol.eig_clip),
    )?;
    Ok(mass * empirical.total_control_cost
        + gamma
            * (crate::gaussian::kl_gaussian(&fit_first, alpha)?
                + crate::gaussian::kl_gaussian(&fit_last, beta)?))
}
