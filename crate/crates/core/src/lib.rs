//! Numerical tail machinery for fixed points of the smoothing transform
//! `R = sum_{i=1}^N A_i R_i + B`.
//!
//! * [`weights`]: parametric laws of `(A, B)`, exact moments, plain and tilted samplers.
//! * [`cramer`]: `m(s) = N E|A|^s`, the roots `gamma < alpha` and derived margins.
//! * [`ldp`]: exact tail oracles, Bahadur-Rao formulas and tilted importance sampling.
//! * [`pathevents`]: barrier events along one path, lattice DP and sandwich reports.
//! * [`fixedpoint`]: population dynamics, tree unfolding and tail reports.
//! * [`certificate`]: finite-`t` positivity certificate for the tail constant.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod cramer;
pub mod error;
pub mod fixedpoint;
pub mod ldp;
pub mod numeric;
pub mod pathevents;
pub mod report;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
