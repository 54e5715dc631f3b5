//! Simulation and verification toolkit for a prion polymerization model
//! with polymer joining: a monomer ODE coupled to a transport,
//! fragmentation and coagulation equation on polymer sizes `y > y0`.
//!
//! The crate is organised bottom-up: [`grid`] and [`kernels`] describe the
//! discretisation and the rates, [`operators`] applies each term of the
//! right-hand side, [`solver`] advances the coupled system, [`diagnostics`]
//! turns trajectories into checkable quantities, and [`oracle`] integrates
//! the closed moment system available for the integrable kernel family.

// `!(x > 0.0)` style checks deliberately reject NaN; a failed run carries
// its partial output in the error.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::result_large_err,
    clippy::needless_range_loop
)]

pub mod diagnostics;
pub mod grid;
pub mod kernels;
pub mod operators;
pub mod oracle;
pub mod quad;
pub mod solver;
pub mod study;

pub use grid::{GridError, GridFunction, SizeGrid, Spacing};
pub use kernels::{HypothesisFamily, KernelError, KernelSet, ModelParams};
