//! Grid-based discrete oracle: discretization of Gaussian measures onto a
//! regular grid and an entropic unbalanced Sinkhorn solver in the log
//! domain, used to cross-check the closed-form Gaussian solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMeasure;
use crate::{s, Scalar};

/// A nonnegative measure supported on a regular grid (dimension 1 or 2).
#[derive(Debug, Clone)]
pub struct GridMeasure<T: Scalar> {
    points: Vec<DVector<T>>,
    weights: DVector<T>,
    cell_volume: T,
}

impl<T: Scalar> GridMeasure<T> {
    pub fn new(points: Vec<DVector<T>>, weights: DVector<T>, cell_volume: T) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let d = points[0].len();
        if d == 0 || d > 2 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "grid oracle supports dimensions 1 and 2 only".into(),
            });
        }
        for (i, w) in weights.iter().enumerate() {
            if *w < T::zero() {
                return Err(Error::SupportViolation { index: i });
            }
        }
        Ok(Self {
            points,
            weights,
            cell_volume,
        })
    }

    pub fn points(&self) -> &[DVector<T>] {
        &self.points
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn cell_volume(&self) -> T {
        self.cell_volume
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn total_mass(&self) -> T {
        self.weights.sum()
    }

    /// Mass, mean, and covariance of the grid measure.
    pub fn moments(&self) -> Result<(T, DVector<T>, DMatrix<T>)> {
        weighted_moments(&self.points, &self.weights)
    }
}

/// Mass, mean, and covariance of weighted points.
pub fn weighted_moments<T: Scalar>(
    points: &[DVector<T>],
    weights: &DVector<T>,
) -> Result<(T, DVector<T>, DMatrix<T>)> {
    let d = points[0].len();
    let mass = weights.sum();
    if mass <= T::zero() {
        return Err(Error::NonPositiveMass {
            mass: mass.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut mean = DVector::zeros(d);
    for (x, &w) in points.iter().zip(weights.iter()) {
        mean += x * w;
    }
    mean /= mass;
    let mut cov = DMatrix::zeros(d, d);
    for (x, &w) in points.iter().zip(weights.iter()) {
        let c = x - &mean;
        cov += &c * c.transpose() * w;
    }
    cov /= mass;
    Ok((mass, mean, cov))
}

/// Discretizes a Gaussian measure onto a regular grid over `[lo, hi]^d`
/// with `n` points per axis, weighting each node by `density · cell_volume`.
///
/// The box must cover at least ±4 standard deviations of every axis;
/// anything under ±6 is reported with a warning.
pub fn discretize<T: Scalar>(
    measure: &GaussianMeasure<T>,
    lo: &DVector<T>,
    hi: &DVector<T>,
    n: usize,
) -> Result<GridMeasure<T>> {
    let d = measure.dim();
    if d > 2 {
        return Err(Error::InvalidParameter {
            name: "measure",
            reason: "grid oracle supports dimensions 1 and 2 only".into(),
        });
    }
    if lo.len() != d || hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: lo.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "need at least 2 grid points per axis".into(),
        });
    }
    let mut coverage = T::max_value().unwrap();
    for i in 0..d {
        if hi[i] <= lo[i] {
            return Err(Error::InvalidParameter {
                name: "domain",
                reason: "upper bound must exceed lower bound".into(),
            });
        }
        let sd = measure.cov()[(i, i)].sqrt();
        let left = (measure.mean()[i] - lo[i]) / sd;
        let right = (hi[i] - measure.mean()[i]) / sd;
        coverage = coverage.min(left).min(right);
    }
    if coverage < s(4.0) {
        return Err(Error::DomainTooNarrow {
            coverage: coverage.to_f64().unwrap_or(f64::NAN),
        });
    }
    if coverage < s(6.0) {
        log::warn!(
            "grid covers only {:.2} standard deviations; oracle moments may be biased",
            coverage.to_f64().unwrap_or(f64::NAN)
        );
    }

    let steps: Vec<T> = (0..d)
        .map(|i| (hi[i] - lo[i]) / s::<T>((n - 1) as f64))
        .collect();
    let cell_volume = steps.iter().fold(T::one(), |acc, &h| acc * h);
    let mut points = Vec::new();
    if d == 1 {
        for i in 0..n {
            points.push(DVector::from_vec(vec![lo[0] + steps[0] * s::<T>(i as f64)]));
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                points.push(DVector::from_vec(vec![
                    lo[0] + steps[0] * s::<T>(i as f64),
                    lo[1] + steps[1] * s::<T>(j as f64),
                ]));
            }
        }
    }
    let mut raw = Vec::with_capacity(points.len());
    for x in &points {
        raw.push(measure.density(x)? * cell_volume);
    }
    let weights = DVector::from_vec(raw);
    GridMeasure::new(points, weights, cell_volume)
}

/// A coupling between two grid measures.
#[derive(Debug, Clone)]
pub struct DiscretePlan<T: Scalar> {
    pub weights: DMatrix<T>,
}

impl<T: Scalar> DiscretePlan<T> {
    pub fn marginal1(&self) -> DVector<T> {
        DVector::from_iterator(
            self.weights.nrows(),
            self.weights.row_iter().map(|r| r.sum()),
        )
    }

    pub fn marginal2(&self) -> DVector<T> {
        DVector::from_iterator(
            self.weights.ncols(),
            self.weights.column_iter().map(|c| c.sum()),
        )
    }

    pub fn total_mass(&self) -> T {
        self.weights.sum()
    }
}

/// Convergence report of the discrete Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct DiscreteReport {
    pub iterations: usize,
    pub converged: bool,
    /// `⟨C, P⟩`.
    pub transport_cost: f64,
    /// `γ(KL(P1‖a) + KL(P2‖b))` in generalized (unnormalized) form.
    pub marginal_penalty: f64,
    /// `ε KL(P‖a⊗b)`, the entropic regularizer actually added.
    pub entropy_term: f64,
    /// `transport_cost + marginal_penalty` (the debiased unbalanced objective,
    /// without the ε term).
    pub objective: f64,
}

fn log_weights<T: Scalar>(w: &DVector<T>) -> Vec<T> {
    let tiny = s::<T>(1e-300);
    w.iter().map(|&v| v.max(tiny).ln()).collect()
}

fn squared_cost<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>]) -> DMatrix<T> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| (&a[i] - &b[j]).norm_squared())
}

/// Generalized KL divergence between nonnegative weight vectors on the same
/// support: `Σ p log(p/q) − p + q`.
pub fn discrete_kl<T: Scalar>(p: &DVector<T>, q: &DVector<T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let tiny = s::<T>(1e-300);
    let mut acc = T::zero();
    for (i, (&pi, &qi)) in p.iter().zip(q.iter()).enumerate() {
        if pi < T::zero() || qi < T::zero() {
            return Err(Error::SupportViolation { index: i });
        }
        if pi > T::zero() && qi <= T::zero() {
            return Err(Error::SupportViolation { index: i });
        }
        if pi > T::zero() {
            acc += pi * (pi / qi.max(tiny)).ln() - pi + qi;
        } else {
            acc += qi;
        }
    }
    Ok(acc)
}

fn logsumexp<T: Scalar>(vals: impl Iterator<Item = T>) -> T {
    let collected: Vec<T> = vals.collect();
    let m = collected
        .iter()
        .fold(-T::max_value().unwrap(), |acc, &v| acc.max(v));
    if m == -T::max_value().unwrap() {
        return -T::max_value().unwrap();
    }
    let sum = collected
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - m).exp());
    m + sum.ln()
}

/// Entropic unbalanced transport between grid measures by log-domain
/// Sinkhorn iterations with the KL-prox exponent `γ/(γ+ε)`.
pub fn solve_discrete_uot<T: Scalar>(
    mu: &GridMeasure<T>,
    nu: &GridMeasure<T>,
    gamma: T,
    epsilon: T,
    max_iters: usize,
) -> Result<(DiscretePlan<T>, DiscreteReport)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    if epsilon <= T::zero() || gamma <= T::zero() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "gamma and epsilon must be strictly positive".into(),
        });
    }
    let cost = squared_cost(mu.points(), nu.points());
    let (na, nb) = (mu.points().len(), nu.points().len());
    let log_a = log_weights(mu.weights());
    let log_b = log_weights(nu.weights());
    let tau = gamma / (gamma + epsilon);
    let tol = s::<T>(1e-9);

    let mut f = vec![T::zero(); na];
    let mut g = vec![T::zero(); nb];
    let mut iterations = max_iters;
    let mut converged = false;
    for it in 0..max_iters {
        let mut delta = T::zero();
        for i in 0..na {
            let lse = logsumexp((0..nb).map(|j| log_b[j] + (g[j] - cost[(i, j)]) / epsilon));
            let new = -tau * epsilon * lse;
            delta = delta.max((new - f[i]).abs());
            f[i] = new;
        }
        for j in 0..nb {
            let lse = logsumexp((0..na).map(|i| log_a[i] + (f[i] - cost[(i, j)]) / epsilon));
            let new = -tau * epsilon * lse;
            delta = delta.max((new - g[j]).abs());
            g[j] = new;
        }
        if delta < tol {
            iterations = it + 1;
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("unbalanced Sinkhorn hit the iteration cap ({max_iters})");
    }

    let plan = DMatrix::from_fn(na, nb, |i, j| {
        (log_a[i] + log_b[j] + (f[i] + g[j] - cost[(i, j)]) / epsilon).exp()
    });
    let plan = DiscretePlan { weights: plan };

    let transport = crate::linalg::frob_inner(&cost, &plan.weights)
        .to_f64()
        .unwrap_or(f64::NAN);
    let kl1 = discrete_kl(&plan.marginal1(), mu.weights())?
        .to_f64()
        .unwrap_or(f64::NAN);
    let kl2 = discrete_kl(&plan.marginal2(), nu.weights())?
        .to_f64()
        .unwrap_or(f64::NAN);
    let mut entropy = 0.0f64;
    for i in 0..na {
        for j in 0..nb {
            let p = plan.weights[(i, j)].to_f64().unwrap_or(0.0);
            let q = (log_a[i] + log_b[j]).exp().to_f64().unwrap_or(0.0);
            if p > 0.0 {
                entropy += p * (p / q.max(1e-300)).ln() - p + q;
            } else {
                entropy += q;
            }
        }
    }
    let gamma_f = gamma.to_f64().unwrap_or(f64::NAN);
    let report = DiscreteReport {
        iterations,
        converged,
        transport_cost: transport,
        marginal_penalty: gamma_f * (kl1 + kl2),
        entropy_term: epsilon.to_f64().unwrap_or(f64::NAN) * entropy,
        objective: transport + gamma_f * (kl1 + kl2),
    };
    Ok((plan, report))
}

/// Balanced entropic transport between equal-mass grid measures; returns
/// the plan and `⟨C, P⟩`.
pub fn solve_discrete_ot<T: Scalar>(
    mu: &GridMeasure<T>,
    nu: &GridMeasure<T>,
    epsilon: T,
    max_iters: usize,
) -> Result<(DiscretePlan<T>, f64, bool)> {
    let ma = mu.total_mass();
    let mb = nu.total_mass();
    if ((ma - mb) / ma).abs() > s(1e-6) {
        return Err(Error::InvalidParameter {
            name: "measures",
            reason: "balanced transport requires equal masses".into(),
        });
    }
    let cost = squared_cost(mu.points(), nu.points());
    let (na, nb) = (mu.points().len(), nu.points().len());
    let log_a = log_weights(mu.weights());
    let log_b = log_weights(nu.weights());
    let tol = s::<T>(1e-9);
    let mut f = vec![T::zero(); na];
    let mut g = vec![T::zero(); nb];
    let mut converged = false;
    for _ in 0..max_iters {
        let mut delta = T::zero();
        for i in 0..na {
            let lse = logsumexp((0..nb).map(|j| log_b[j] + (g[j] - cost[(i, j)]) / epsilon));
            let new = -epsilon * lse;
            delta = delta.max((new - f[i]).abs());
            f[i] = new;
        }
        for j in 0..nb {
            let lse = logsumexp((0..na).map(|i| log_a[i] + (f[i] - cost[(i, j)]) / epsilon));
            let new = -epsilon * lse;
            delta = delta.max((new - g[j]).abs());
            g[j] = new;
        }
        if delta < tol {
            converged = true;
            break;
        }
    }
    // The scaling above drives P1 = a·(total/ma); normalize mass exactly.
    let mut plan = DMatrix::from_fn(na, nb, |i, j| {
        (log_a[i] + log_b[j] + (f[i] + g[j] - cost[(i, j)]) / epsilon).exp()
    });
    let total = plan.sum();
    if total > T::zero() {
        plan *= ma / total;
    }
    let plan = DiscretePlan { weights: plan };
    let transport = crate::linalg::frob_inner(&cost, &plan.weights)
        .to_f64()
        .unwrap_or(f64::NAN);
    Ok((plan, transport, converged))
}

/// Linear extrapolation to `ε = 0` through the two smallest-ε samples of
/// `(ε, value)` pairs.
pub fn extrapolate_to_zero(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "need at least two epsilon samples".into(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (e1, v1) = sorted[0];
    let (e2, v2) = sorted[1];
    if e1 <= 0.0 || (e2 - e1).abs() < 1e-15 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "epsilon values must be positive and distinct".into(),
        });
    }
    Ok(v1 - e1 * (v2 - v1) / (e2 - e1))
}
