//! Mass-scaled Gaussian measures `c·N(m, Σ)` and their closed-form geometry:
//! the Bures–Wasserstein transport cost, the optimal affine map, and the
//! unbalanced KL divergence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::{s, Scalar};

/// Numerical tolerances shared across the toolkit.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances<T: Scalar> {
    /// Eigenvalue clipping floor for PSD projections and square roots.
    pub eig_clip: T,
    /// Relative symmetry tolerance.
    pub sym_tol: T,
    /// PSD slack allowed on constructed covariances.
    pub psd_tol: T,
    /// Finite-difference / gradient validation tolerance.
    pub grad_tol: T,
    /// First-order stationarity target for iterative solvers.
    pub opt_tol: T,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        Self {
            eig_clip: s(1e-12),
            sym_tol: s(1e-10),
            psd_tol: s(1e-9),
            grad_tol: s(1e-5),
            opt_tol: s(1e-7),
        }
    }
}

/// A mass-scaled Gaussian measure `mass·N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure<T: Scalar> {
    mass: T,
    mean: DVector<T>,
    cov: DMatrix<T>,
}

impl<T: Scalar> GaussianMeasure<T> {
    /// Builds a measure, symmetrizing the covariance and rejecting
    /// non-positive mass, asymmetric or indefinite covariances.
    pub fn new(mass: T, mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let tol = Tolerances::<T>::default();
        if mass <= T::zero() {
            return Err(Error::NonPositiveMass {
                mass: mass.to_f64().unwrap_or(f64::NAN),
            });
        }
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        linalg::check_symmetric(&cov, tol.sym_tol)?;
        let cov = linalg::symmetrize(&cov);
        let min = linalg::min_eigenvalue(&cov);
        if min < -tol.psd_tol {
            return Err(Error::NotPsd {
                min_eig: min.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { mass, mean, cov })
    }

    /// Builds a reference measure, which additionally requires a strictly
    /// positive-definite covariance.
    pub fn new_reference(mass: T, mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let g = Self::new(mass, mean, cov)?;
        if linalg::min_eigenvalue(&g.cov) <= s(1e-12) {
            return Err(Error::SingularReference);
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mass(&self) -> T {
        self.mass
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Density of the normalized Gaussian `N(mean, cov)` times the mass.
    /// Requires a positive-definite covariance.
    pub fn density(&self, x: &DVector<T>) -> Result<T> {
        let d = self.dim();
        let inv = linalg::inv_spd(&self.cov, s(1e-300))?;
        let logdet = linalg::logdet_spd(&self.cov, s(1e-300))?;
        let diff = x - &self.mean;
        let quad = (&diff.transpose() * &inv * &diff)[(0, 0)];
        let log_norm = s::<T>(-0.5)
            * (s::<T>(d as f64) * s::<T>(std::f64::consts::TAU).ln() + logdet);
        Ok(self.mass * (log_norm - quad * s::<T>(0.5)).exp())
    }
}

/// The affine transport map `x ↦ linear·x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<T: Scalar> {
    pub linear: DMatrix<T>,
    pub offset: DVector<T>,
}

impl<T: Scalar> AffineMap<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            linear: DMatrix::identity(d, d),
            offset: DVector::zeros(d),
        }
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        &self.linear * x + &self.offset
    }
}

/// Squared Wasserstein-2 distance between `N(m1, S1)` and `N(m2, S2)`:
/// `‖m2−m1‖² + Trace(S1 + S2 − 2(S1^{1/2} S2 S1^{1/2})^{1/2})`.
pub fn gelbrich_w2sq<T: Scalar>(
    m1: &DVector<T>,
    s1: &DMatrix<T>,
    m2: &DVector<T>,
    s2: &DMatrix<T>,
    tol: &Tolerances<T>,
) -> Result<T> {
    if m1.len() != m2.len() || s1.nrows() != s2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m1.len(),
            got: m2.len(),
        });
    }
    let r1 = linalg::sqrtm_psd(s1, tol.sym_tol, tol.eig_clip)?;
    let inner = linalg::symmetrize(&(&r1 * s2 * &r1));
    let cross = linalg::sqrtm_psd(&inner, tol.sym_tol, tol.eig_clip)?;
    let diff = m2 - m1;
    let val = diff.norm_squared() + s1.trace() + s2.trace() - s::<T>(2.0) * cross.trace();
    Ok(val.max(T::zero()))
}

/// The optimal affine transport map of the Bures–Wasserstein coupling:
/// `T = S1^{−1/2}(S1^{1/2} S2 S1^{1/2})^{1/2} S1^{−1/2}`, `t = m2 − T m1`.
pub fn optimal_affine_map<T: Scalar>(
    m1: &DVector<T>,
    s1: &DMatrix<T>,
    m2: &DVector<T>,
    s2: &DMatrix<T>,
    tol: &Tolerances<T>,
) -> Result<AffineMap<T>> {
    let r1 = linalg::sqrtm_psd(s1, tol.sym_tol, tol.eig_clip)?;
    let r1_inv = linalg::inv_sqrtm_spd(s1, tol.sym_tol, s(1e-12))?;
    let inner = linalg::symmetrize(&(&r1 * s2 * &r1));
    let cross = linalg::sqrtm_psd(&inner, tol.sym_tol, tol.eig_clip)?;
    let linear = linalg::symmetrize(&(&r1_inv * cross * &r1_inv));
    let offset = m2 - &linear * m1;
    Ok(AffineMap { linear, offset })
}

/// Unbalanced KL divergence between mass-scaled Gaussians,
/// `KL(a‖b) = c_a·[log(c_a/c_b) + KL(N_a‖N_b)] + c_b − c_a`.
pub fn kl_gaussian<T: Scalar>(a: &GaussianMeasure<T>, b: &GaussianMeasure<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let d = a.dim();
    let inv_b = linalg::inv_spd(b.cov(), s(1e-12)).map_err(|_| Error::SingularReference)?;
    let logdet_b = linalg::logdet_spd(b.cov(), s(1e-12)).map_err(|_| Error::SingularReference)?;
    if a == b {
        return Ok(T::zero());
    }
    // log det Σ_a with rank-deficiency pushed to -inf avoided: a PSD but
    // possibly singular covariance makes the probability KL infinite; the
    // solvers only call this with PD iterates.
    let logdet_a = linalg::logdet_spd(a.cov(), s(1e-300))?;
    let diff = b.mean() - a.mean();
    let maha = (&diff.transpose() * &inv_b * &diff)[(0, 0)];
    let kl_prob = s::<T>(0.5)
        * ((&inv_b * a.cov()).trace() + maha - s::<T>(d as f64) + logdet_b - logdet_a);
    let ca = a.mass();
    let cb = b.mass();
    Ok(ca * ((ca / cb).ln() + kl_prob) + cb - ca)
}
