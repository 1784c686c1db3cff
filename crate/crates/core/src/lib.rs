//! Perturbative Vlasov–Poisson solver around an infinite-mass steady
//! background, with numerical measurement of the a-priori estimates that
//! control the perturbation.
//!
//! The solution is represented through the perturbation `g = F - f`, whose
//! velocity integral is the charge density. Densities and fields live on a
//! radial grid; `g` itself is never stored but evaluated on demand along
//! backward characteristics of a stored field history.

pub mod background;
pub mod bounds;
pub mod coulomb;
pub mod error;
pub mod extfield;
pub mod kinetic;
pub mod quadrature;
pub mod report;
pub mod run;
pub mod scenario;
pub mod traj;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// `R(x) = (1 + |x|²)^{1/2}` as a function of `|x|`.
#[inline]
pub fn japanese_bracket(r: f64) -> f64 {
    (1.0 + r * r).sqrt()
}
