//! Desk-scale laboratory for counting rational points near homogeneous hypersurfaces.
//!
//! For `f` homogeneous of degree `d` on `R^{n-1}`, the central quantity is
//!
//! ```text
//! N_f(δ, Q) = #{ (q, a) : Q ≤ q < 2Q, ‖a‖ < q, ‖q f(a/q)‖ ≤ δ }
//! ```
//!
//! whose size is governed by the two terms `δQⁿ` and `(δ/Q)^{(n-1)/d} Qⁿ`. The crate provides
//! exact and smoothed counters, the Legendre dual surface, oscillatory integrals with their
//! stationary-phase expansions, the dyadic bookkeeping used to split the count, and a sweep
//! harness that fits exponents against the predicted terms.

pub mod asymptotics;
pub mod cli;
pub mod counting;
pub mod error;
pub mod homfun;
pub mod jet;
pub mod oscint;
pub mod quad;
pub mod weights;

pub use error::{Error, Result};

use num_complex::Complex64;

/// `e(t) = exp(2πit)`.
pub fn e(t: f64) -> Complex64 {
    Complex64::from_polar(1.0, std::f64::consts::TAU * t)
}
