//! Unbalanced optimal transport (UOT) between Gaussian measures and
//! unbalanced density control (UDC) for discrete-time linear systems.
//!
//! The library is organized around the two-stage structure shared by both
//! problems: a convex subproblem over means and covariances followed by a
//! closed-form optimal-mass computation. A brute-force grid oracle and a
//! Monte-Carlo trajectory simulator provide independent verification paths.
//!
//! All numerics are generic over the scalar type via [`Scalar`]; concrete
//! `f64` aliases live at the crate root.

pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod opt;
pub mod oracle;
pub mod sim;
pub mod udc;
pub mod uot;

pub use error::{Error, Result};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar types the toolkit works over (`f32`, `f64`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {}
impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

/// Converts an `f64` constant into the working scalar type.
pub(crate) fn s<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("scalar constant conversion")
}

// Concrete f64 aliases.
pub type GaussianMeasure64 = gaussian::GaussianMeasure<f64>;
pub type AffineMap64 = gaussian::AffineMap<f64>;
pub type Tolerances64 = gaussian::Tolerances<f64>;
pub type UotProblem64 = uot::UotProblem<f64>;
pub type UotSolution64 = uot::UotSolution<f64>;
pub type LinearSystem64 = udc::LinearSystem<f64>;
pub type UdcProblem64 = udc::UdcProblem<f64>;
pub type UdcSolution64 = udc::UdcSolution<f64>;
pub type AffinePolicy64 = udc::AffinePolicy<f64>;
pub type GridMeasure64 = oracle::GridMeasure<f64>;
pub type DiscretePlan64 = oracle::DiscretePlan<f64>;
