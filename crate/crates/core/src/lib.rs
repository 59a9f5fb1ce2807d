//! Exact null-condition analysis and pseudo-spectral simulation of
//! quadratic Klein-Gordon systems in two space dimensions.
//!
//! The symbolic half (`model`, `trigpoly`, `nullcheck`, `normalform`)
//! works over exact rationals: it decides the null condition for a
//! resonant two-component system, classifies the resonance matrices and
//! produces normal-form decompositions. The numerical half (`spectral`,
//! `diagnostics`) integrates the system on a periodic grid and measures
//! energy growth, pointwise decay and free-profile convergence.

pub mod diagnostics;
pub mod model;
pub mod normalform;
pub mod nullcheck;
pub mod spectral;
pub mod trigpoly;

pub use model::{DerivIndex, MassPair, Monomial, QuadraticSystem};
pub use normalform::{Decomposition, GeneratorBasis, ResonanceMatrix};
pub use nullcheck::NullVerdict;
pub use trigpoly::{GaussRat, OmegaPoly, ThetaSeries};

/// Exact rational scalar used throughout the symbolic engine.
pub type Rat = num_rational::BigRational;

/// Shorthand for building a `Rat` from an integer pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(num.into(), den.into())
}
