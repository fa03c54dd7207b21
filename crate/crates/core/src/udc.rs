//! Unbalanced density control for discrete-time linear systems: the
//! Gaussian/affine moment reduction, the convex mean and covariance
//! programs, policy recovery, and the closed-form mass stage.
//!
//! The covariance program is solved in the steering variables
//! `S_k = K_k Σ_k`, `Y_k = K_k Σ_k K_kᵀ + Σᵘ_k`, which make the covariance
//! recursion affine; the dropped equality relaxes to the Schur-complement
//! LMI `[[Y_k, S_k], [S_kᵀ, Σ_k]] ⪰ 0` and is tight at the optimum because
//! `Trace(Y_k)` is minimized.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMeasure, Tolerances};
use crate::linalg;
use crate::opt;
use crate::uot::SolverReport;
use crate::{s, Scalar};

/// Discrete-time linear dynamics `x_{k+1} = A x_k + B u_k` over a horizon of
/// `horizon` state steps (controls act at steps `1..horizon-1`).
#[derive(Debug, Clone)]
pub struct LinearSystem<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    horizon: usize,
}

impl<T: Scalar> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, horizon: usize) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidParameter {
                name: "A",
                reason: "state matrix must be square".into(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        if horizon < 2 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: "need at least 2 time steps".into(),
            });
        }
        Ok(Self { a, b, horizon })
    }

    pub fn state_matrix(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn input_matrix(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Gaussian-affine feedback policy `u_k = K_k (x_k − m_k) + v_k + w_k`,
/// `w_k ~ N(0, Σᵘ_k)`, with the centering means `m_k`.
#[derive(Debug, Clone)]
pub struct AffinePolicy<T: Scalar> {
    pub gains: Vec<DMatrix<T>>,
    pub feedforwards: Vec<DVector<T>>,
    pub noise_covs: Vec<DMatrix<T>>,
    pub means: Vec<DVector<T>>,
}

impl<T: Scalar> AffinePolicy<T> {
    pub fn validate(&self, system: &LinearSystem<T>) -> Result<()> {
        let t = system.horizon();
        let (d, p) = (system.state_dim(), system.input_dim());
        if self.gains.len() != t - 1
            || self.feedforwards.len() != t - 1
            || self.noise_covs.len() != t - 1
        {
            return Err(Error::DimensionMismatch {
                expected: t - 1,
                got: self.gains.len(),
            });
        }
        if self.means.len() != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                got: self.means.len(),
            });
        }
        for k in 0..t - 1 {
            if self.gains[k].nrows() != p
                || self.gains[k].ncols() != d
                || self.feedforwards[k].len() != p
                || self.noise_covs[k].nrows() != p
            {
                return Err(Error::DimensionMismatch { expected: p, got: self.gains[k].nrows() });
            }
        }
        Ok(())
    }
}

/// Mean and covariance trajectory of the state distribution.
#[derive(Debug, Clone)]
pub struct MomentTrajectory<T: Scalar> {
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
}

/// Decision variables of the covariance program in steering form.
#[derive(Debug, Clone)]
pub struct SdpVariables<T: Scalar> {
    /// State covariances `Σ_1..Σ_T`.
    pub sigmas: Vec<DMatrix<T>>,
    /// `S_k = K_k Σ_k` (p×d), `k = 1..T−1`.
    pub cross: Vec<DMatrix<T>>,
    /// `Y_k = K_k Σ_k K_kᵀ + Σᵘ_k` (p×p symmetric), `k = 1..T−1`.
    pub second: Vec<DMatrix<T>>,
}

impl<T: Scalar> SdpVariables<T> {
    /// Minimum eigenvalue of the block LMI `[[Y_k, S_k],[S_kᵀ, Σ_k]]`.
    pub fn lmi_min_eig(&self, k: usize) -> T {
        linalg::min_eigenvalue(&lmi_block(&self.second[k], &self.cross[k], &self.sigmas[k]))
    }
}

fn lmi_block<T: Scalar>(y: &DMatrix<T>, s_: &DMatrix<T>, sigma: &DMatrix<T>) -> DMatrix<T> {
    let p = y.nrows();
    let d = sigma.nrows();
    let mut block = DMatrix::zeros(p + d, p + d);
    block.view_mut((0, 0), (p, p)).copy_from(y);
    block.view_mut((0, p), (p, d)).copy_from(s_);
    block.view_mut((p, 0), (d, p)).copy_from(&s_.transpose());
    block.view_mut((p, p), (d, d)).copy_from(sigma);
    block
}

/// Which mass weighting the closed-form stage uses; the UOT-consistent
/// `ψ(c)` is the default, `γ·ψ(c)` is the literal reduced-program reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassTerm {
    #[default]
    Psi,
    GammaPsi,
}

/// Solver options for the UDC pipeline.
#[derive(Debug, Clone)]
pub struct UdcOptions<T: Scalar> {
    pub tolerances: Tolerances<T>,
    pub max_iterations: usize,
    pub mass_term: MassTerm,
}

impl<T: Scalar> Default for UdcOptions<T> {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            max_iterations: 10_000,
            mass_term: MassTerm::default(),
        }
    }
}

/// The UDC problem: dynamics plus Gaussian references and KL weight.
#[derive(Debug, Clone)]
pub struct UdcProblem<T: Scalar> {
    system: LinearSystem<T>,
    alpha: GaussianMeasure<T>,
    beta: GaussianMeasure<T>,
    gamma: T,
    inv_alpha: DMatrix<T>,
    inv_beta: DMatrix<T>,
    logdet_alpha: T,
    logdet_beta: T,
}

impl<T: Scalar> UdcProblem<T> {
    pub fn new(
        system: LinearSystem<T>,
        alpha: GaussianMeasure<T>,
        beta: GaussianMeasure<T>,
        gamma: T,
    ) -> Result<Self> {
        let d = system.state_dim();
        if alpha.dim() != d || beta.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: alpha.dim(),
            });
        }
        if gamma <= T::zero() {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: "must be strictly positive".into(),
            });
        }
        let floor = s(1e-12);
        let inv_alpha = linalg::inv_spd(alpha.cov(), floor).map_err(|_| Error::SingularReference)?;
        let inv_beta = linalg::inv_spd(beta.cov(), floor).map_err(|_| Error::SingularReference)?;
        let logdet_alpha = linalg::logdet_spd(alpha.cov(), floor)?;
        let logdet_beta = linalg::logdet_spd(beta.cov(), floor)?;
        Ok(Self {
            system,
            alpha,
            beta,
            gamma,
            inv_alpha,
            inv_beta,
            logdet_alpha,
            logdet_beta,
        })
    }

    pub fn system(&self) -> &LinearSystem<T> {
        &self.system
    }

    pub fn alpha(&self) -> &GaussianMeasure<T> {
        &self.alpha
    }

    pub fn beta(&self) -> &GaussianMeasure<T> {
        &self.beta
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn logdet_offset(&self) -> T {
        self.logdet_alpha + self.logdet_beta - s::<T>(2.0 * self.system.state_dim() as f64)
    }

    /// Endpoint mean fidelity `M(m_1, m_T)` (without the γ weight).
    pub fn endpoint_mean_cost(&self, m1: &DVector<T>, m_t: &DVector<T>) -> T {
        let d1 = m1 - self.alpha.mean();
        let d2 = m_t - self.beta.mean();
        s::<T>(0.5)
            * ((&d1.transpose() * &self.inv_alpha * &d1)[(0, 0)]
                + (&d2.transpose() * &self.inv_beta * &d2)[(0, 0)])
    }

    /// Endpoint covariance fidelity `S(Σ_1, Σ_T)` (without the γ weight).
    pub fn endpoint_cov_cost(&self, s1: &DMatrix<T>, s_t: &DMatrix<T>) -> Result<T> {
        let floor = s(1e-300);
        Ok(s::<T>(0.5)
            * ((&self.inv_alpha * s1).trace() + (&self.inv_beta * s_t).trace()
                - linalg::logdet_spd(s1, floor)?
                - linalg::logdet_spd(s_t, floor)?))
    }

    /// Mass penalty `ψ(c)` (identical to the UOT case).
    pub fn mass_cost(&self, c: T) -> Result<T> {
        if c < T::zero() {
            return Err(Error::NonPositiveMass {
                mass: c.to_f64().unwrap_or(f64::NAN),
            });
        }
        let phi = |c: T, c_ref: T| {
            if c == T::zero() {
                c_ref
            } else {
                c * (c / c_ref).ln() - c + c_ref
            }
        };
        Ok(c * self.gamma * s::<T>(0.5) * self.logdet_offset()
            + self.gamma * phi(c, self.alpha.mass())
            + self.gamma * phi(c, self.beta.mass()))
    }

    /// Globally minimizes `Σ‖v_k‖² + γ M(m_1, m_T)` by eliminating
    /// `m_T = A^{T−1} m_1 + Σ_k A^{T−1−k} B v_k` and solving the dense
    /// positive-definite normal equations.
    pub fn solve_mean_trajectory(&self) -> Result<(Vec<DVector<T>>, Vec<DVector<T>>)> {
        let (d, p, t) = (
            self.system.state_dim(),
            self.system.input_dim(),
            self.system.horizon(),
        );
        let n = d + (t - 1) * p;
        let a = self.system.state_matrix();
        let b = self.system.input_matrix();

        // m_T = G z with z = (m_1, v_1, ..., v_{T−1}).
        let mut g = DMatrix::<T>::zeros(d, n);
        let mut a_pow = DMatrix::<T>::identity(d, d); // A^{T−1−k} built backwards
        for k in (0..t - 1).rev() {
            g.view_mut((0, d + k * p), (d, p)).copy_from(&(&a_pow * b));
            a_pow = a * a_pow;
        }
        g.view_mut((0, 0), (d, d)).copy_from(&a_pow);

        // H z = rhs for the quadratic Σ‖v‖² + γ/2 maha(m1) + γ/2 maha(Gz).
        let mut h = DMatrix::<T>::zeros(n, n);
        for i in d..n {
            h[(i, i)] = s::<T>(2.0);
        }
        let mut e1 = DMatrix::<T>::zeros(d, n);
        e1.view_mut((0, 0), (d, d)).copy_from(&DMatrix::identity(d, d));
        h += e1.transpose() * &self.inv_alpha * &e1 * self.gamma;
        h += g.transpose() * &self.inv_beta * &g * self.gamma;
        let rhs = e1.transpose() * &self.inv_alpha * self.alpha.mean() * self.gamma
            + g.transpose() * &self.inv_beta * self.beta.mean() * self.gamma;
        let z = nalgebra::linalg::Cholesky::new(linalg::symmetrize(&h))
            .ok_or(Error::SingularSystem)?
            .solve(&rhs);

        let m1 = z.rows(0, d).into_owned();
        let ffs: Vec<DVector<T>> = (0..t - 1).map(|k| z.rows(d + k * p, p).into_owned()).collect();
        let mut means = Vec::with_capacity(t);
        means.push(m1);
        for k in 0..t - 1 {
            let next = a * &means[k] + b * &ffs[k];
            means.push(next);
        }
        Ok((means, ffs))
    }

    /// Covariance-program objective `Σ Trace(Y_k) + γ S(Σ_1, Σ_T)` at the
    /// given steering variables (the Σ trajectory must satisfy the affine
    /// recursion; it is recomputed here from `Σ_1, S, Y`).
    pub fn covariance_objective(&self, vars: &SdpVariables<T>) -> Result<T> {
        let sigmas = self.roll_sigmas(&vars.sigmas[0], &vars.cross, &vars.second);
        let s_t = sigmas.last().unwrap();
        let tr_y = vars
            .second
            .iter()
            .fold(T::zero(), |acc, y| acc + y.trace());
        Ok(tr_y + self.gamma * self.endpoint_cov_cost(&sigmas[0], s_t)?)
    }

    /// Analytic gradient of [`covariance_objective`](Self::covariance_objective)
    /// with respect to `(Σ_1, {S_k}, {Y_k})`, obtained by the adjoint pass
    /// through the affine recursion.
    pub fn covariance_gradient(
        &self,
        vars: &SdpVariables<T>,
    ) -> Result<(DMatrix<T>, Vec<DMatrix<T>>, Vec<DMatrix<T>>)> {
        self.barrier_value_grad(&vars.sigmas[0], &vars.cross, &vars.second, T::zero())
            .map(|(_, grads)| grads)
            .ok_or(Error::SingularCovariance { min_eig: f64::NAN })
    }

    fn roll_sigmas(
        &self,
        sigma1: &DMatrix<T>,
        cross: &[DMatrix<T>],
        second: &[DMatrix<T>],
    ) -> Vec<DMatrix<T>> {
        let a = self.system.state_matrix();
        let b = self.system.input_matrix();
        let t = self.system.horizon();
        let mut sigmas = Vec::with_capacity(t);
        sigmas.push(linalg::symmetrize(sigma1));
        for k in 0..t - 1 {
            let sk = &cross[k];
            let next = a * &sigmas[k] * a.transpose()
                + b * sk * a.transpose()
                + a * sk.transpose() * b.transpose()
                + b * &second[k] * b.transpose();
            sigmas.push(linalg::symmetrize(&next));
        }
        sigmas
    }

    /// Value and gradient of `objective + μ·barrier`, where the barrier is
    /// `−Σ_k log det [[Y_k, S_k],[S_kᵀ, Σ_k]]`. Returns `None` outside the
    /// domain (any block or `Σ_T` not positive definite).
    #[allow(clippy::type_complexity)]
    fn barrier_value_grad(
        &self,
        sigma1: &DMatrix<T>,
        cross: &[DMatrix<T>],
        second: &[DMatrix<T>],
        mu: T,
    ) -> Option<(T, (DMatrix<T>, Vec<DMatrix<T>>, Vec<DMatrix<T>>))> {
        let a = self.system.state_matrix();
        let b = self.system.input_matrix();
        let t = self.system.horizon();
        let (d, p) = (self.system.state_dim(), self.system.input_dim());
        let half = s::<T>(0.5);
        let sigmas = self.roll_sigmas(sigma1, cross, second);

        // Domain checks and per-block inverses via Cholesky.
        let chol_t = nalgebra::linalg::Cholesky::new(sigmas[t - 1].clone())?;
        let logdet_t = s::<T>(2.0)
            * chol_t
                .l_dirty()
                .diagonal()
                .iter()
                .fold(T::zero(), |acc, &v| acc + v.ln());
        let inv_t = chol_t.inverse();
        let chol_1 = nalgebra::linalg::Cholesky::new(sigmas[0].clone())?;
        let logdet_1 = s::<T>(2.0)
            * chol_1
                .l_dirty()
                .diagonal()
                .iter()
                .fold(T::zero(), |acc, &v| acc + v.ln());
        let inv_1 = chol_1.inverse();

        let mut block_invs = Vec::with_capacity(t - 1);
        let mut barrier = T::zero();
        for k in 0..t - 1 {
            let block = lmi_block(&second[k], &cross[k], &sigmas[k]);
            let chol = nalgebra::linalg::Cholesky::new(block)?;
            let logdet = s::<T>(2.0)
                * chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v.ln());
            barrier -= logdet;
            block_invs.push(chol.inverse());
        }

        let tr_y = second.iter().fold(T::zero(), |acc, y| acc + y.trace());
        let obj = tr_y
            + self.gamma
                * half
                * ((&self.inv_alpha * &sigmas[0]).trace() + (&self.inv_beta * &sigmas[t - 1]).trace()
                    - logdet_1
                    - logdet_t);
        let value = obj + mu * barrier;

        // Adjoint pass: accumulate dF/dΣ_k backwards through the recursion.
        let mut g_cross = vec![DMatrix::<T>::zeros(p, d); t - 1];
        let mut g_second = vec![DMatrix::<T>::zeros(p, p); t - 1];
        let mut g_sigma = linalg::symmetrize(&((&self.inv_beta - &inv_t) * (self.gamma * half)));
        for k in (0..t - 1).rev() {
            let w = &block_invs[k];
            let w11 = w.view((0, 0), (p, p)).into_owned();
            let w12 = w.view((0, p), (p, d)).into_owned();
            let w22 = w.view((p, p), (d, d)).into_owned();

            g_second[k] = DMatrix::identity(p, p) + b.transpose() * &g_sigma * b - &w11 * mu;
            g_cross[k] = b.transpose() * &g_sigma * a * s::<T>(2.0) - &w12 * (s::<T>(2.0) * mu);
            let mut direct = -(&w22 * mu);
            if k == 0 {
                direct += linalg::symmetrize(&((&self.inv_alpha - &inv_1) * (self.gamma * half)));
            }
            g_sigma = direct + a.transpose() * &g_sigma * a;
            g_sigma = linalg::symmetrize(&g_sigma);
        }
        Some((value, (g_sigma, g_cross, g_second)))
    }

    /// Strictly feasible interior start: `Σ_1 = Σ_α`, `S = 0`,
    /// `Y = σ²I` for the smallest σ keeping the rolled trajectory PD.
    fn feasible_init(&self) -> Result<SdpVariables<T>> {
        let t = self.system.horizon();
        let (d, p) = (self.system.state_dim(), self.system.input_dim());
        for &sigma_u in &[1e-2, 1e-1, 1.0, 10.0] {
            let cross = vec![DMatrix::<T>::zeros(p, d); t - 1];
            let second = vec![DMatrix::<T>::identity(p, p) * s::<T>(sigma_u); t - 1];
            let sigmas = self.roll_sigmas(self.alpha.cov(), &cross, &second);
            let ok = sigmas
                .iter()
                .all(|sig| nalgebra::linalg::Cholesky::new(sig.clone() - DMatrix::identity(d, d) * s::<T>(1e-12)).is_some());
            if ok {
                return Ok(SdpVariables {
                    sigmas,
                    cross,
                    second,
                });
            }
        }
        Err(Error::InfeasibleDynamics {
            reason: "no open-loop noise level yields a positive-definite covariance trajectory"
                .into(),
        })
    }

    /// Solves the covariance program by a log-det-barrier path on the block
    /// LMIs, each stage minimized by BFGS.
    pub fn solve_covariance_program(
        &self,
        options: &UdcOptions<T>,
    ) -> Result<(SdpVariables<T>, SolverReport)> {
        let init = self.feasible_init()?;
        self.solve_covariance_program_from(init, options)
    }

    /// Barrier solve from an explicit strictly feasible starting point.
    pub fn solve_covariance_program_from(
        &self,
        init: SdpVariables<T>,
        options: &UdcOptions<T>,
    ) -> Result<(SdpVariables<T>, SolverReport)> {
        let start = Instant::now();
        let t = self.system.horizon();
        let (d, p) = (self.system.state_dim(), self.system.input_dim());
        let mut z = pack(&init.sigmas[0], &init.cross, &init.second, d, p);
        if self
            .barrier_value_grad(&init.sigmas[0], &init.cross, &init.second, T::one())
            .is_none()
        {
            return Err(Error::InfeasibleDynamics {
                reason: "starting point is not strictly feasible".into(),
            });
        }

        let mut total_iters = 0usize;
        let mut grad_norm;
        let mut converged;
        let mut mu = s::<T>(0.1);
        let mu_min = s::<T>(1e-9);
        loop {
            let mut eval = |zv: &DVector<T>| {
                let (sigma1, cross, second) = unpack(zv, d, p, t);
                self.barrier_value_grad(&sigma1, &cross, &second, mu)
                    .map(|(f, (g_sigma, g_cross, g_second))| {
                        (f, pack_grad(&g_sigma, &g_cross, &g_second, d, p))
                    })
            };
            let stage_tol = options.tolerances.opt_tol.max(mu * s::<T>(1e-2));
            let budget = (options.max_iterations - total_iters).min(400).max(1);
            let res = opt::bfgs(&mut eval, z, stage_tol, budget);
            z = res.x;
            total_iters += res.iterations;
            grad_norm = res.grad_norm.to_f64().unwrap_or(f64::NAN);
            converged = res.converged;
            if mu <= mu_min || total_iters >= options.max_iterations {
                break;
            }
            mu = (mu * s::<T>(0.1)).max(mu_min);
        }

        // The last barrier stages have curvature of order 1/mu, so rounding
        // limits the attainable gradient norm to roughly sqrt(EPS/mu).
        // Residuals below that floor are converged for all practical
        // purposes: the solution error is bounded by the duality gap, not
        // by the raw barrier gradient.
        let roundoff_floor = (f64::EPSILON / mu.to_f64().unwrap_or(1.0)).sqrt();
        if !converged && grad_norm <= roundoff_floor {
            converged = true;
        }

        let (sigma1, cross, second) = unpack(&z, d, p, t);
        let sigmas = self.roll_sigmas(&sigma1, &cross, &second);
        let vars = SdpVariables {
            sigmas,
            cross,
            second,
        };
        let report = SolverReport {
            iterations: total_iters,
            final_gradient_norm: grad_norm,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if !converged {
            log::warn!(
                "UDC covariance program did not reach tolerance: |g| = {:.3e} after {} iterations",
                report.final_gradient_norm,
                report.iterations
            );
        }
        Ok((vars, report))
    }

    /// Closed-form mass stage `c* = √(c_α c_β)·exp(−q*/(2γ w) − L/4)` with
    /// `w = 1` for the ψ reading and `w = γ` for the literal γψ reading.
    pub fn mass_star(&self, q_star: T, mass_term: MassTerm) -> T {
        let weight = match mass_term {
            MassTerm::Psi => T::one(),
            MassTerm::GammaPsi => self.gamma,
        };
        (self.alpha.mass() * self.beta.mass()).sqrt()
            * (-q_star / (s::<T>(2.0) * self.gamma * weight)
                - self.logdet_offset() * s::<T>(0.25))
            .exp()
    }

    /// Full pipeline: mean QP, covariance barrier solve, policy recovery,
    /// closed-form mass, and a propagate-based consistency check.
    pub fn solve(&self, options: &UdcOptions<T>) -> Result<UdcSolution<T>> {
        let (means, ffs) = self.solve_mean_trajectory()?;
        let (vars, report) = self.solve_covariance_program(options)?;
        let t = self.system.horizon();

        let mean_value = ffs
            .iter()
            .fold(T::zero(), |acc, v| acc + v.norm_squared())
            + self.gamma * self.endpoint_mean_cost(&means[0], &means[t - 1]);
        let q_star = mean_value + self.covariance_objective(&vars)?;
        let mass = self.mass_star(q_star, options.mass_term);
        let objective = match options.mass_term {
            MassTerm::Psi => mass * q_star + self.mass_cost(mass)?,
            MassTerm::GammaPsi => mass * q_star + self.gamma * self.mass_cost(mass)?,
        };

        let (gains, noise_covs) = recover_policy(&vars, &self.system)?;
        let policy = AffinePolicy {
            gains,
            feedforwards: ffs,
            noise_covs,
            means: means.clone(),
        };
        let trajectory = propagate(&self.system, &means[0], &vars.sigmas[0], &policy)?;
        for k in 0..t {
            let gap = (&trajectory.covs[k] - &vars.sigmas[k]).amax();
            if gap > s(1e-7) {
                log::warn!(
                    "propagated covariance deviates from program at step {}: {:.3e}",
                    k,
                    gap.to_f64().unwrap_or(f64::NAN)
                );
            }
        }
        Ok(UdcSolution {
            mass,
            policy,
            trajectory,
            variables: vars,
            subproblem_value: q_star,
            objective,
            report,
        })
    }
}

/// Output of the two-stage UDC solve.
#[derive(Debug, Clone)]
pub struct UdcSolution<T: Scalar> {
    pub mass: T,
    pub policy: AffinePolicy<T>,
    pub trajectory: MomentTrajectory<T>,
    pub variables: SdpVariables<T>,
    pub subproblem_value: T,
    pub objective: T,
    pub report: SolverReport,
}

/// Recovers feedback gains and noise covariances from steering variables:
/// `K_k = S_k Σ_k⁻¹`, `Σᵘ_k = Y_k − S_k Σ_k⁻¹ S_kᵀ`.
pub fn recover_policy<T: Scalar>(
    vars: &SdpVariables<T>,
    system: &LinearSystem<T>,
) -> Result<(Vec<DMatrix<T>>, Vec<DMatrix<T>>)> {
    let t = system.horizon();
    let mut gains = Vec::with_capacity(t - 1);
    let mut noise_covs = Vec::with_capacity(t - 1);
    for k in 0..t - 1 {
        let inv = linalg::inv_spd(&vars.sigmas[k], s(1e-12))
            .map_err(|_| Error::SingularStateCov { step: k + 1 })?;
        let gain = &vars.cross[k] * &inv;
        let schur = linalg::symmetrize(
            &(&vars.second[k] - &vars.cross[k] * &inv * vars.cross[k].transpose()),
        );
        let min = linalg::min_eigenvalue(&schur);
        if min < s(-1e-9) {
            return Err(Error::NegativeSchurComplement {
                step: k + 1,
                min_eig: min.to_f64().unwrap_or(f64::NAN),
            });
        }
        noise_covs.push(linalg::clip_spd(&schur, T::zero()));
        gains.push(gain);
    }
    Ok((gains, noise_covs))
}

/// Builds the Gaussian conditional control law from joint second moments:
/// gain `Λ_k Σ_k⁻¹`, feedforward `ū_k`, noise `Σᵘ_k − Λ_k Σ_k⁻¹ Λ_kᵀ`.
#[derive(Debug, Clone)]
pub struct JointMoments<T: Scalar> {
    pub state_mean: DVector<T>,
    pub state_cov: DMatrix<T>,
    pub control_mean: DVector<T>,
    pub control_cov: DMatrix<T>,
    /// Cross covariance `Λ_k = Cov(u_k, x_k)` (p×d).
    pub cross_cov: DMatrix<T>,
}

pub fn policy_from_joint_moments<T: Scalar>(
    steps: &[JointMoments<T>],
    terminal_mean: DVector<T>,
    mass: T,
) -> Result<(GaussianMeasure<T>, AffinePolicy<T>)> {
    if steps.is_empty() {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "need at least one control step".into(),
        });
    }
    let psd_tol = Tolerances::<T>::default().psd_tol;
    let mut gains = Vec::with_capacity(steps.len());
    let mut feedforwards = Vec::with_capacity(steps.len());
    let mut noise_covs = Vec::with_capacity(steps.len());
    let mut means = Vec::with_capacity(steps.len() + 1);
    for (k, step) in steps.iter().enumerate() {
        let inv = linalg::inv_spd(&step.state_cov, s(1e-12))
            .map_err(|_| Error::SingularStateCov { step: k + 1 })?;
        let gain = &step.cross_cov * &inv;
        let schur = linalg::symmetrize(
            &(&step.control_cov - &step.cross_cov * &inv * step.cross_cov.transpose()),
        );
        let min = linalg::min_eigenvalue(&schur);
        if min < -psd_tol {
            return Err(Error::NegativeSchurComplement {
                step: k + 1,
                min_eig: min.to_f64().unwrap_or(f64::NAN),
            });
        }
        gains.push(gain);
        feedforwards.push(step.control_mean.clone());
        noise_covs.push(linalg::clip_spd(&schur, T::zero()));
        means.push(step.state_mean.clone());
    }
    means.push(terminal_mean);
    let initial = GaussianMeasure::new(mass, steps[0].state_mean.clone(), steps[0].state_cov.clone())?;
    Ok((
        initial,
        AffinePolicy {
            gains,
            feedforwards,
            noise_covs,
            means,
        },
    ))
}

/// Exact rollout of the moment recursions under a Gaussian-affine policy.
pub fn propagate<T: Scalar>(
    system: &LinearSystem<T>,
    initial_mean: &DVector<T>,
    initial_cov: &DMatrix<T>,
    policy: &AffinePolicy<T>,
) -> Result<MomentTrajectory<T>> {
    policy.validate(system)?;
    let a = system.state_matrix();
    let b = system.input_matrix();
    let t = system.horizon();
    if initial_mean.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            got: initial_mean.len(),
        });
    }
    let mut means = Vec::with_capacity(t);
    let mut covs = Vec::with_capacity(t);
    means.push(initial_mean.clone());
    covs.push(linalg::symmetrize(initial_cov));
    for k in 0..t - 1 {
        let gain = &policy.gains[k];
        let closed = a + b * gain;
        let u_mean = gain * (&means[k] - &policy.means[k]) + &policy.feedforwards[k];
        means.push(a * &means[k] + b * &u_mean);
        let next = &closed * &covs[k] * closed.transpose()
            + b * &policy.noise_covs[k] * b.transpose();
        covs.push(linalg::symmetrize(&next));
    }
    Ok(MomentTrajectory { means, covs })
}

// Packing of (Σ1, {S_k}, {Y_k}) into a flat vector for BFGS; symmetric
// matrices use their upper triangle with off-diagonal gradients doubled.

fn sym_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn push_sym<T: Scalar>(v: &mut Vec<T>, m: &DMatrix<T>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i..d {
            v.push(m[(i, j)]);
        }
    }
}

fn read_sym<T: Scalar>(v: &DVector<T>, offset: usize, d: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(d, d);
    let mut idx = offset;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    m
}

fn push_sym_grad<T: Scalar>(v: &mut Vec<T>, g: &DMatrix<T>) {
    let d = g.nrows();
    for i in 0..d {
        for j in i..d {
            if i == j {
                v.push(g[(i, j)]);
            } else {
                v.push(g[(i, j)] + g[(j, i)]);
            }
        }
    }
}

fn pack<T: Scalar>(
    sigma1: &DMatrix<T>,
    cross: &[DMatrix<T>],
    second: &[DMatrix<T>],
    _d: usize,
    _p: usize,
) -> DVector<T> {
    let mut v = Vec::new();
    push_sym(&mut v, sigma1);
    for (sk, yk) in cross.iter().zip(second.iter()) {
        v.extend(sk.iter().copied());
        push_sym(&mut v, yk);
    }
    DVector::from_vec(v)
}

fn pack_grad<T: Scalar>(
    g_sigma: &DMatrix<T>,
    g_cross: &[DMatrix<T>],
    g_second: &[DMatrix<T>],
    _d: usize,
    _p: usize,
) -> DVector<T> {
    let mut v = Vec::new();
    push_sym_grad(&mut v, g_sigma);
    for (gs, gy) in g_cross.iter().zip(g_second.iter()) {
        v.extend(gs.iter().copied());
        push_sym_grad(&mut v, gy);
    }
    DVector::from_vec(v)
}

#[allow(clippy::type_complexity)]
fn unpack<T: Scalar>(
    z: &DVector<T>,
    d: usize,
    p: usize,
    t: usize,
) -> (DMatrix<T>, Vec<DMatrix<T>>, Vec<DMatrix<T>>) {
    let sigma1 = read_sym(z, 0, d);
    let mut offset = sym_len(d);
    let mut cross = Vec::with_capacity(t - 1);
    let mut second = Vec::with_capacity(t - 1);
    for _ in 0..t - 1 {
        let sk = DMatrix::from_iterator(p, d, (0..p * d).map(|i| z[offset + i]));
        offset += p * d;
        let yk = read_sym(z, offset, p);
        offset += sym_len(p);
        cross.push(sk);
        second.push(yk);
    }
    (sigma1, cross, second)
}
