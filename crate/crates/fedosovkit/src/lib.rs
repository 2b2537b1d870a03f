//! Star products in arbitrary Darboux charts.
//!
//! The crate builds Moyal star products without leaving a chosen canonical
//! chart: a flat symplectic connection is pushed into the chart, functions are
//! lifted into a truncated Weyl algebra by an iterated covariant recursion,
//! and the product of two lifts is projected back to a function.  On top of
//! that sit the tools the construction exists for:
//!
//! * star-eigenvalue equations for one-dimensional Hamiltonians written in
//!   time-energy coordinates, including the generic coefficient tables of the
//!   resulting differential equations,
//! * the harmonic-oscillator spectrum worked end to end (confluent series,
//!   quantization, Wigner eigenfunctions),
//! * grid-based Moyal products and Wigner-function purity tests that decide
//!   whether a candidate phase-space function describes a pure state,
//! * first-order perturbation theory performed entirely inside the chart
//!   machinery.
//!
//! The sign convention is fixed once and used everywhere:
//!
//! ```text
//! A * B = A.B - (i hbar / 2) A P B + ...     so   {q, p}_M = -1
//! ```
//!
//! where `P` is the Poisson bidifferential.  Most of the literature uses the
//! opposite sign of the first-order term; every oriented identity in this
//! crate (brackets, imaginary parts of eigen-equations) follows the minus
//! convention above.
//!
//! Numeric entry points live in [`grid`], [`moyal`], [`wigner`]; symbolic
//! entry points in [`expr`], [`weyl`], [`connection`], [`fedosov`],
//! [`oscillator`], [`perturbation`].  The `fedosovkit` binary exposes the
//! same operations as subcommands; `examples/` shows each capability as a
//! runnable program.

pub mod charts;
pub mod cli;
pub mod connection;
pub mod error;
pub mod expr;
pub mod fedosov;
pub mod grid;
pub mod moyal;
pub mod numeric;
pub mod oscillator;
pub mod perturbation;
pub mod weyl;
pub mod wigner;

pub use error::{Error, Result};
pub use expr::ScalarExpr;
