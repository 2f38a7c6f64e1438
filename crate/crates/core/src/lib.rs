//! Stability analysis for time-harmonic Maxwell transmission problems with
//! sign-changing coefficients.
//!
//! * [`complementing`] decides the Cauchy complementing condition for a pair
//!   of positive symmetric matrices, by the algebraic criterion and by an
//!   independent half-space mode search.
//! * [`geometry`] and [`audit`] check the interface hypotheses of the
//!   stability theorems on sampled surfaces.
//! * [`mie`] solves the radiating problem for a ball with constant
//!   (possibly negative) coefficients and loss, and sweeps the loss to zero.
//! * [`estimates`] verifies the anti-curl and normal-trace inequalities on
//!   test fields.

pub mod algebra;
pub mod audit;
pub mod cli;
pub mod complementing;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod mie;
pub mod numeric;
pub mod specfun;

pub use error::{Error, Result};
