//! Shared helpers for the integration suites.
#![allow(dead_code)]


use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::Rng;
use uotdc_core::gaussian::GaussianMeasure;

pub fn random_spd(d: usize, rng: &mut StdRng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.4;
    (&m + m.transpose()) * 0.5
}

pub fn random_measure(d: usize, rng: &mut StdRng) -> GaussianMeasure<f64> {
    GaussianMeasure::new(
        rng.gen_range(0.5..2.0),
        DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)),
        random_spd(d, rng),
    )
    .unwrap()
}

pub fn gauss_1d(mass: f64, mean: f64, var: f64) -> GaussianMeasure<f64> {
    GaussianMeasure::new(
        mass,
        DVector::from_vec(vec![mean]),
        DMatrix::from_vec(1, 1, vec![var]),
    )
    .unwrap()
}

/// Generalized KL `∫ p log(p/q) − ∫p + ∫q` between 1-D densities given as
/// closures, by midpoint quadrature on `[lo, hi]`.
pub fn kl_quadrature(
    p: impl Fn(f64) -> f64,
    q: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut integral = 0.0;
    let mut mass_p = 0.0;
    let mut mass_q = 0.0;
    for i in 0..n {
        let x = lo + (i as f64 + 0.5) * h;
        let pv = p(x);
        let qv = q(x);
        mass_p += pv * h;
        mass_q += qv * h;
        if pv > 0.0 {
            integral += pv * (pv / qv.max(1e-300)).ln() * h;
        }
    }
    integral - mass_p + mass_q
}

/// Density of a scaled 1-D Gaussian `c·N(m, v)`.
pub fn gauss_pdf(c: f64, m: f64, v: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| {
        c * (-(x - m) * (x - m) / (2.0 * v)).exp() / (v * std::f64::consts::TAU).sqrt()
    }
}
