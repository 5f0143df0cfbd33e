//! Numerical laboratory for random metastable interval maps.
//!
//! The crate builds random cocycles of piecewise-affine maps with slowly
//! leaking invariant intervals, discretizes their transfer operators on a
//! uniform grid, and extracts the random invariant density, the second
//! Oseledets function and the second Lyapunov exponent. A matching layer of
//! random-environment Markov chains provides the averaged small-leak limits.
//!
//! * [`driving`]: invertible ergodic bases with finite-range observables.
//! * [`maps`]: paired tent and chain tent maps, holes and hole measures.
//! * [`transfer`]: grid densities, Ulam matrices, variation inequalities.
//! * [`oseledets`]: pull-back densities, second functions, limit comparison.
//! * [`markov`]: transition-matrix cocycles, weight series, `v⁰` solve.
//! * [`cli`]: configuration-driven experiments writing CSV.

pub mod cli;
pub mod driving;
pub mod error;
pub mod maps;
pub mod markov;
pub mod oseledets;
pub mod transfer;

pub use error::{Error, Result};
