//! Exact-arithmetic Bernoulli product measures on `R^N`.
//!
//! A Bernoulli product assigns a probability `p_nu` to each of the `p^N`
//! children of a `p`-adic cube of the period cube `Q_0 = [-1/2, 1/2)^N`,
//! iterates that assignment independently across generations, and extends the
//! result to all of `R^N` by integer periodization. Every quantity the crate
//! reports is either an exact rational (on the shifted `p`-adic grid) or a
//! certified rational interval obtained from inner/outer cell covers.
//!
//! The crate is organized around four subsystems:
//!
//! * [`measure`] — cube/box geometry and exact or enclosed measure evaluation;
//! * [`solver`] — the exact linear system cutting out the coefficient class
//!   whose strips have flat conditional measure, and its affine parametrization;
//! * [`audit`] — annular decay ratios under `d_1`, `d_2`, `d_inf`, doubling and
//!   contiguity bounds, and the diagonal-chain growth check;
//! * [`diag`] — entropy, dimension, density trajectories and law-of-large-numbers
//!   experiments quantifying singularity.

// Multi-axis geometry reads best with explicit axis indices.
#![allow(clippy::needless_range_loop)]

pub mod audit;
pub mod combinatorics;
pub mod config;
pub mod diag;
pub mod error;
pub mod measure;
pub mod rational;
pub mod region;
pub mod solver;

pub use error::Error;
pub use measure::{
    AxisBox, BernoulliSpec, IndexVector, LengthClassCoefficients, MeasureEnclosure, PAdicCube,
    PAdicPath, ValidatedMeasure,
};
pub use rational::Rational;
pub use region::Metric;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
