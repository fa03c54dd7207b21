//! Gaussian unbalanced optimal transport: the finite-dimensional reduction
//! over means, covariances and mass, solved by a convex mean/covariance
//! subproblem followed by the closed-form optimal mass.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{optimal_affine_map, AffineMap, GaussianMeasure, Tolerances};
use crate::linalg;
use crate::{s, Scalar};

/// Convergence diagnostics for an iterative solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
    pub wall_time: f64,
}

/// The Gaussian UOT problem: references `alpha`, `beta` and KL weight `gamma`.
#[derive(Debug, Clone)]
pub struct UotProblem<T: Scalar> {
    alpha: GaussianMeasure<T>,
    beta: GaussianMeasure<T>,
    gamma: T,
    // Reference inverses and log-determinants, computed once per problem.
    inv_alpha: DMatrix<T>,
    inv_beta: DMatrix<T>,
    logdet_alpha: T,
    logdet_beta: T,
}

impl<T: Scalar> UotProblem<T> {
    pub fn new(alpha: GaussianMeasure<T>, beta: GaussianMeasure<T>, gamma: T) -> Result<Self> {
        if alpha.dim() != beta.dim() {
            return Err(Error::DimensionMismatch {
                expected: alpha.dim(),
                got: beta.dim(),
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
            alpha,
            beta,
            gamma,
            inv_alpha,
            inv_beta,
            logdet_alpha,
            logdet_beta,
        })
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

    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    /// `L = log det Σ_α + log det Σ_β − 2d`.
    pub fn logdet_offset(&self) -> T {
        self.logdet_alpha + self.logdet_beta - s::<T>(2.0 * self.dim() as f64)
    }

    /// Mean cost `M(m1, m2) = ‖m2−m1‖² + (γ/2)·Mahalanobis fidelity terms`.
    pub fn mean_cost(&self, m1: &DVector<T>, m2: &DVector<T>) -> Result<T> {
        let d = self.dim();
        if m1.len() != d || m2.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: m1.len().max(m2.len()),
            });
        }
        let half_gamma = self.gamma * s::<T>(0.5);
        let d1 = m1 - self.alpha.mean();
        let d2 = m2 - self.beta.mean();
        Ok((m2 - m1).norm_squared()
            + half_gamma * (&d1.transpose() * &self.inv_alpha * &d1)[(0, 0)]
            + half_gamma * (&d2.transpose() * &self.inv_beta * &d2)[(0, 0)])
    }

    /// Covariance cost `C(Σ1, Σ2)`: the Bures transport traces plus the
    /// trace/log-det KL fidelity terms.
    pub fn cov_cost(&self, s1: &DMatrix<T>, s2: &DMatrix<T>) -> Result<T> {
        let tol = Tolerances::<T>::default();
        let r1 = linalg::sqrtm_psd(s1, tol.sym_tol, tol.eig_clip)?;
        let cross = linalg::sqrtm_psd(
            &linalg::symmetrize(&(&r1 * s2 * &r1)),
            tol.sym_tol,
            tol.eig_clip,
        )?;
        let floor = s(1e-300);
        let half_gamma = self.gamma * s::<T>(0.5);
        Ok(-s::<T>(2.0) * cross.trace()
            + half_gamma * (&self.inv_beta * s2).trace() - half_gamma * linalg::logdet_spd(s2, floor)?
            + s2.trace()
            + half_gamma * (&self.inv_alpha * s1).trace()
            - half_gamma * linalg::logdet_spd(s1, floor)?
            + s1.trace())
    }

    /// Mass cost `ψ(c)`, extended to `c = 0` by continuity.
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

    /// Analytic gradient of `C` with respect to `(Σ1, Σ2)`.
    pub fn cov_gradient(&self, s1: &DMatrix<T>, s2: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let tol = Tolerances::<T>::default();
        let d = self.dim();
        let eye = DMatrix::identity(d, d);
        let half_gamma = self.gamma * s::<T>(0.5);
        let floor = s(1e-14);

        let r1 = linalg::sqrtm_psd(s1, tol.sym_tol, tol.eig_clip)?;
        let r2 = linalg::sqrtm_psd(s2, tol.sym_tol, tol.eig_clip)?;
        // ∇_{Σ1}[−2 Tr √(Σ1^{1/2}Σ2Σ1^{1/2})] = −Σ2^{1/2}(Σ2^{1/2}Σ1Σ2^{1/2})^{−1/2}Σ2^{1/2}
        let b2 = {
            let inner = linalg::symmetrize(&(&r2 * s1 * &r2));
            let inv_half = linalg::inv_sqrtm_spd(&inner, tol.sym_tol, floor)?;
            linalg::symmetrize(&(&r2 * inv_half * &r2))
        };
        let b1 = {
            let inner = linalg::symmetrize(&(&r1 * s2 * &r1));
            let inv_half = linalg::inv_sqrtm_spd(&inner, tol.sym_tol, floor)?;
            linalg::symmetrize(&(&r1 * inv_half * &r1))
        };
        let g1 =
            -&b2 + &self.inv_alpha * half_gamma - linalg::inv_spd(s1, floor)? * half_gamma + &eye;
        let g2 =
            -&b1 + &self.inv_beta * half_gamma - linalg::inv_spd(s2, floor)? * half_gamma + &eye;
        Ok((linalg::symmetrize(&g1), linalg::symmetrize(&g2)))
    }

    /// Solves the mean subproblem exactly via its linear stationarity system.
    pub fn solve_means(&self) -> Result<(DVector<T>, DVector<T>)> {
        let d = self.dim();
        let two = s::<T>(2.0);
        let eye = DMatrix::<T>::identity(d, d);
        let mut h = DMatrix::<T>::zeros(2 * d, 2 * d);
        h.view_mut((0, 0), (d, d))
            .copy_from(&(&eye * two + &self.inv_alpha * self.gamma));
        h.view_mut((0, d), (d, d)).copy_from(&(&eye * -two));
        h.view_mut((d, 0), (d, d)).copy_from(&(&eye * -two));
        h.view_mut((d, d), (d, d))
            .copy_from(&(&eye * two + &self.inv_beta * self.gamma));
        let mut rhs = DVector::<T>::zeros(2 * d);
        rhs.rows_mut(0, d)
            .copy_from(&(&self.inv_alpha * self.alpha.mean() * self.gamma));
        rhs.rows_mut(d, d)
            .copy_from(&(&self.inv_beta * self.beta.mean() * self.gamma));
        let sol = nalgebra::linalg::Cholesky::new(h)
            .ok_or(Error::SingularSystem)?
            .solve(&rhs);
        Ok((sol.rows(0, d).into_owned(), sol.rows(d, d).into_owned()))
    }

    /// Projected gradient descent on the SPD cone for the covariance
    /// subproblem, started from the references.
    pub fn solve_covariances(
        &self,
        tol: &Tolerances<T>,
        max_iters: usize,
    ) -> Result<(DMatrix<T>, DMatrix<T>, SolverReport)> {
        self.solve_covariances_from(
            self.alpha.cov().clone(),
            self.beta.cov().clone(),
            tol,
            max_iters,
        )
    }

    /// Same as [`solve_covariances`](Self::solve_covariances) with an
    /// explicit SPD starting point (used for multi-restart audits).
    pub fn solve_covariances_from(
        &self,
        init1: DMatrix<T>,
        init2: DMatrix<T>,
        tol: &Tolerances<T>,
        max_iters: usize,
    ) -> Result<(DMatrix<T>, DMatrix<T>, SolverReport)> {
        let start = Instant::now();
        let clip = s::<T>(1e-10);
        let mut s1 = linalg::clip_spd(&init1, clip);
        let mut s2 = linalg::clip_spd(&init2, clip);
        let mut f = self.cov_cost(&s1, &s2)?;
        let mut prev: Option<(DMatrix<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>)> = None;
        let mut grad_norm = T::max_value().unwrap();
        let mut iterations = 0;
        let mut converged = false;
        let mut stalls = 0usize;

        for iter in 0..max_iters {
            iterations = iter;
            let (g1, g2) = self.cov_gradient(&s1, &s2)?;
            grad_norm = (g1.norm_squared() + g2.norm_squared()).sqrt();
            if grad_norm <= tol.opt_tol {
                converged = true;
                break;
            }
            // Barzilai-Borwein step from the previous iterate, safeguarded
            // by backtracking.
            let mut step = match &prev {
                Some((ps1, ps2, pg1, pg2)) => {
                    let dx1 = &s1 - ps1;
                    let dx2 = &s2 - ps2;
                    let dg1 = &g1 - pg1;
                    let dg2 = &g2 - pg2;
                    let num = linalg::frob_inner(&dx1, &dx1) + linalg::frob_inner(&dx2, &dx2);
                    let den = linalg::frob_inner(&dx1, &dg1) + linalg::frob_inner(&dx2, &dg2);
                    if den > s(1e-300) {
                        (num / den).clamp(s(1e-8), s(1e3))
                    } else {
                        T::one()
                    }
                }
                None => T::one() / (T::one() + grad_norm),
            };
            prev = Some((s1.clone(), s2.clone(), g1.clone(), g2.clone()));

            let sigma = s::<T>(1e-4);
            // Roundoff slack so the sufficient-decrease test stays meaningful
            // when |f| differences approach machine precision.
            let slack = s::<T>(4.0 * f64::EPSILON) * (T::one() + f.abs());
            let mut accepted = false;
            for _ in 0..60 {
                let c1 = linalg::clip_spd(&(&s1 - &g1 * step), clip);
                let c2 = linalg::clip_spd(&(&s2 - &g2 * step), clip);
                let move_sq = (&c1 - &s1).norm_squared() + (&c2 - &s2).norm_squared();
                if move_sq == T::zero() {
                    break;
                }
                if let Ok(fc) = self.cov_cost(&c1, &c2) {
                    if fc <= f - sigma / step * move_sq + slack {
                        s1 = c1;
                        s2 = c2;
                        f = fc;
                        accepted = true;
                        break;
                    }
                }
                step = step * s::<T>(0.5);
            }
            if !accepted {
                if stalls == 0 {
                    // Drop the stale curvature estimate and retry once from a
                    // plain gradient step before giving up.
                    prev = None;
                    stalls += 1;
                    continue;
                }
                break;
            }
            stalls = 0;
        }

        let report = SolverReport {
            iterations,
            final_gradient_norm: grad_norm.to_f64().unwrap_or(f64::NAN),
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if !converged {
            log::warn!(
                "UOT covariance subproblem did not reach gradient tolerance: |g| = {:.3e} after {} iterations",
                report.final_gradient_norm,
                report.iterations
            );
        }
        Ok((s1, s2, report))
    }

    /// Closed-form optimal mass `c* = √(c_α c_β)·exp(−p*/(2γ) − L/4)`.
    pub fn mass_star(&self, p_star: T) -> T {
        let quarter = s::<T>(0.25);
        (self.alpha.mass() * self.beta.mass()).sqrt()
            * (-p_star / (s::<T>(2.0) * self.gamma) - self.logdet_offset() * quarter).exp()
    }

    /// Full two-stage solve: convex mean/covariance subproblem, then the
    /// closed-form mass, assembled into marginals and the transport map.
    pub fn solve(&self, tol: &Tolerances<T>, max_iters: usize) -> Result<UotSolution<T>> {
        let (m1, m2) = self.solve_means()?;
        let (s1, s2, report) = self.solve_covariances(tol, max_iters)?;
        // p* recomputed from the final iterates, not tracked incrementally.
        let p_star = self.mean_cost(&m1, &m2)? + self.cov_cost(&s1, &s2)?;
        let mass = self.mass_star(p_star);
        let objective = mass * p_star + self.mass_cost(mass)?;
        let map = optimal_affine_map(&m1, &s1, &m2, &s2, tol)?;
        let marginal1 = GaussianMeasure::new(mass, m1, s1)?;
        let marginal2 = GaussianMeasure::new(mass, m2, s2)?;
        Ok(UotSolution {
            mass,
            marginal1,
            marginal2,
            map,
            subproblem_value: p_star,
            objective,
            report,
        })
    }
}

/// Output of the two-stage UOT solve.
#[derive(Debug, Clone)]
pub struct UotSolution<T: Scalar> {
    pub mass: T,
    pub marginal1: GaussianMeasure<T>,
    pub marginal2: GaussianMeasure<T>,
    pub map: AffineMap<T>,
    pub subproblem_value: T,
    pub objective: T,
    pub report: SolverReport,
}

/// Rasterization of a one-dimensional transport plan for heatmap rendering.
///
/// The optimal plan is supported on an affine graph, i.e. its density is
/// degenerate; a small visualization jitter (a fraction of the marginal
/// scale) is added to the joint covariance so the raster is finite. The
/// jitter never enters any objective.
#[derive(Debug, Clone)]
pub struct PlanRaster<T: Scalar> {
    /// Grid coordinates shared by both axes.
    pub coords: Vec<T>,
    /// `density[(i, j)]` is the jittered plan density at `(x1_i, x2_j)`.
    pub density: DMatrix<T>,
    /// Standard deviation of the visualization jitter actually used.
    pub sigma_vis: T,
}

impl<T: Scalar> UotSolution<T> {
    /// Rasterizes the (1-D) optimal plan on an `n×n` grid over `[lo, hi]²`.
    pub fn rasterize_plan(&self, lo: T, hi: T, n: usize, jitter_frac: T) -> Result<PlanRaster<T>> {
        if self.marginal1.dim() != 1 {
            return Err(Error::InvalidParameter {
                name: "plan-grid",
                reason: "plan rasterization is only defined for 1-D problems".into(),
            });
        }
        if n < 2 || hi <= lo {
            return Err(Error::InvalidParameter {
                name: "plan-grid",
                reason: "need lo < hi and at least 2 grid cells".into(),
            });
        }
        let s1 = self.marginal1.cov()[(0, 0)];
        let s2 = self.marginal2.cov()[(0, 0)];
        let t = self.map.linear[(0, 0)];
        let m1 = self.marginal1.mean()[0];
        let m2 = self.marginal2.mean()[0];
        let sigma_vis = jitter_frac * s1.max(s2).sqrt();
        // Joint covariance of (x1, T x1 + t) plus isotropic jitter.
        let jit = sigma_vis * sigma_vis;
        let c11 = s1 + jit;
        let c12 = t * s1;
        let c22 = s2 + jit;
        let det = c11 * c22 - c12 * c12;
        let norm = self.mass / (s::<T>(std::f64::consts::TAU) * det.sqrt());
        let (i11, i12, i22) = (c22 / det, -c12 / det, c11 / det);

        let h = (hi - lo) / s::<T>(n as f64);
        let coords: Vec<T> = (0..n)
            .map(|i| lo + h * s::<T>(i as f64 + 0.5))
            .collect();
        let density = DMatrix::from_fn(n, n, |i, j| {
            let dx = coords[i] - m1;
            let dy = coords[j] - m2;
            let quad = i11 * dx * dx + s::<T>(2.0) * i12 * dx * dy + i22 * dy * dy;
            norm * (-quad * s::<T>(0.5)).exp()
        });
        Ok(PlanRaster {
            coords,
            density,
            sigma_vis,
        })
    }
}
