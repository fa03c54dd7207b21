//! Symmetric positive-semidefinite linear algebra built on eigendecompositions.
//!
//! Every matrix function here (square root, inverse, log-determinant) goes
//! through a single symmetric eigendecomposition path with explicit
//! eigenvalue clipping, so near-singular covariances fail loudly instead of
//! producing NaNs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{s, Scalar};

/// `(M + Mᵀ)/2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * s::<T>(0.5)
}

/// Largest absolute entry of `M − Mᵀ`.
pub fn max_asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let d = m - m.transpose();
    d.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

pub fn check_symmetric<T: Scalar>(m: &DMatrix<T>, tol: T) -> Result<()> {
    let asym = max_asymmetry(m);
    let scale = T::one().max(m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs())));
    if asym > tol * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym.to_f64().unwrap_or(f64::NAN),
            tol: (tol * scale).to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Eigendecomposition of a (symmetrized) matrix: returns `(Q, λ)` with
/// `M = Q diag(λ) Qᵀ`.
pub fn sym_eigen<T: Scalar>(m: &DMatrix<T>) -> (DMatrix<T>, DVector<T>) {
    let se = symmetrize(m).symmetric_eigen();
    (se.eigenvectors, se.eigenvalues)
}

pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let (_, vals) = sym_eigen(m);
    vals.iter().fold(T::max_value().unwrap(), |acc, &x| acc.min(x))
}

/// Applies a spectral function to a symmetric matrix.
fn sym_apply<T: Scalar>(q: &DMatrix<T>, vals: &DVector<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let mapped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| f(v)));
    let r = q * DMatrix::from_diagonal(&mapped) * q.transpose();
    symmetrize(&r)
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues below `eig_clip` are treated as zero; an eigenvalue below
/// `-eig_clip` is a hard PSD violation.
pub fn sqrtm_psd<T: Scalar>(m: &DMatrix<T>, sym_tol: T, eig_clip: T) -> Result<DMatrix<T>> {
    check_symmetric(m, sym_tol)?;
    let (q, vals) = sym_eigen(m);
    let min = vals.iter().fold(T::max_value().unwrap(), |acc, &x| acc.min(x));
    if min < -eig_clip {
        return Err(Error::NotPsd {
            min_eig: min.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(sym_apply(&q, &vals, |v| {
        if v <= eig_clip {
            T::zero()
        } else {
            v.sqrt()
        }
    }))
}

/// Inverse square root of a symmetric positive-definite matrix.
pub fn inv_sqrtm_spd<T: Scalar>(m: &DMatrix<T>, sym_tol: T, floor: T) -> Result<DMatrix<T>> {
    check_symmetric(m, sym_tol)?;
    let (q, vals) = sym_eigen(m);
    let min = vals.iter().fold(T::max_value().unwrap(), |acc, &x| acc.min(x));
    if min < floor {
        return Err(Error::SingularCovariance {
            min_eig: min.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(sym_apply(&q, &vals, |v| T::one() / v.sqrt()))
}

/// Inverse of a symmetric positive-definite matrix via eigendecomposition.
pub fn inv_spd<T: Scalar>(m: &DMatrix<T>, floor: T) -> Result<DMatrix<T>> {
    let (q, vals) = sym_eigen(m);
    let min = vals.iter().fold(T::max_value().unwrap(), |acc, &x| acc.min(x));
    if min < floor {
        return Err(Error::SingularCovariance {
            min_eig: min.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(sym_apply(&q, &vals, |v| T::one() / v))
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn logdet_spd<T: Scalar>(m: &DMatrix<T>, floor: T) -> Result<T> {
    let (_, vals) = sym_eigen(m);
    let min = vals.iter().fold(T::max_value().unwrap(), |acc, &x| acc.min(x));
    if min < floor {
        return Err(Error::SingularCovariance {
            min_eig: min.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(vals.iter().fold(T::zero(), |acc, &v| acc + v.ln()))
}

/// Projects a symmetric matrix onto the cone of matrices with eigenvalues
/// at least `floor`.
pub fn clip_spd<T: Scalar>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let (q, vals) = sym_eigen(m);
    sym_apply(&q, &vals, |v| v.max(floor))
}

/// Frobenius inner product `⟨A, B⟩ = Trace(AᵀB)`.
pub fn frob_inner<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
