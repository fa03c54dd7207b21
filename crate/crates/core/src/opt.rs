//! Small dense unconstrained minimizers used by the solvers: BFGS with
//! backtracking line search (domain-aware: the objective may return `None`
//! outside the barrier domain) and a finite-difference gradient checker.

use nalgebra::{DMatrix, DVector};

use crate::{s, Scalar};

#[derive(Debug, Clone)]
pub struct MinimizeResult<T: Scalar> {
    pub x: DVector<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS minimization of `f`, which returns `(value, gradient)` or `None`
/// when evaluated outside the objective's domain.
pub fn bfgs<T: Scalar>(
    f: &mut dyn FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
    x0: DVector<T>,
    grad_tol: T,
    max_iters: usize,
) -> MinimizeResult<T> {
    let n = x0.len();
    let (mut fx, mut gx) = match f(&x0) {
        Some(v) => v,
        None => {
            return MinimizeResult {
                x: x0,
                value: T::max_value().unwrap(),
                grad_norm: T::max_value().unwrap(),
                iterations: 0,
                converged: false,
            }
        }
    };
    let mut x = x0;
    let mut h_inv = DMatrix::<T>::identity(n, n);
    let c1 = s::<T>(1e-4);

    for iter in 0..max_iters {
        let gnorm = gx.norm();
        if gnorm <= grad_tol {
            return MinimizeResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
            };
        }
        let mut dir = -(&h_inv * &gx);
        let mut slope = dir.dot(&gx);
        if slope >= T::zero() {
            // Curvature information went stale; restart from steepest descent.
            h_inv = DMatrix::identity(n, n);
            dir = -gx.clone();
            slope = -gnorm * gnorm;
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            if let Some((fc, gc)) = f(&cand) {
                if fc <= fx + c1 * step * slope {
                    accepted = Some((cand, fc, gc, step));
                    break;
                }
            }
            step = step * s::<T>(0.5);
        }
        let (x_new, f_new, g_new, _) = match accepted {
            Some(a) => a,
            None => {
                return MinimizeResult {
                    x,
                    value: fx,
                    grad_norm: gnorm,
                    iterations: iter,
                    converged: gnorm <= grad_tol,
                }
            }
        };

        let sv = &x_new - &x;
        let yv = &g_new - &gx;
        let sy = sv.dot(&yv);
        if sy > s::<T>(1e-14) * sv.norm() * yv.norm() {
            // Standard BFGS inverse-Hessian update.
            let rho = T::one() / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            let ss = &sv * sv.transpose();
            let hys = &hy * sv.transpose();
            h_inv = &h_inv + ss * (rho * (T::one() + rho * yhy)) - (&hys + hys.transpose()) * rho;
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
    }
    let gnorm = gx.norm();
    MinimizeResult {
        converged: gnorm <= grad_tol,
        x,
        value: fx,
        grad_norm: gnorm,
        iterations: max_iters,
    }
}

/// Central finite-difference directional derivative of `f` at `x` along `d`.
pub fn directional_fd<T: Scalar>(
    f: &mut dyn FnMut(&DVector<T>) -> Option<T>,
    x: &DVector<T>,
    d: &DVector<T>,
    step: T,
) -> Option<T> {
    let fp = f(&(x + d * step))?;
    let fm = f(&(x - d * step))?;
    Some((fp - fm) / (step + step))
}
