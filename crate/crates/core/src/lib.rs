//! Metric gradient flows, vanishing-viscosity families and BV solutions.
//!
//! This crate integrates doubly nonlinear evolutions `∂ψ(|u'|) ∋ -D_u E(t,u)`
//! on finite-dimensional metric structures by variational minimizing
//! movements, audits the ψ-ψ* energy-dissipation identity along the computed
//! trajectories, runs vanishing-viscosity families (p → 1 or ε → 0), and
//! extracts and validates bounded-variation limit curves whose jumps are
//! priced by conformal transition costs.
//!
//! Module map:
//! - [`dissipation`]: convex dissipation functions ψ, Legendre conjugates,
//!   subdifferentials and growth coefficients.
//! - [`systems`]: metric structures, energies with slopes and powers, and the
//!   built-in example systems.
//! - [`flow`]: minimizing-movement time stepping and the instrumented
//!   [`flow::Trajectory`].
//! - [`audit`]: energy-dissipation residuals, velocity–slope checks, and the
//!   chain-rule inequality along sampled curves.
//! - [`transition`]: conformal path lengths and jump-transition costs.
//! - [`bv`]: BV curves, variation decomposition, jump detection, local
//!   stability and energy-balance validation.
//! - [`family`]: parameterized families of flows and their convergence
//!   diagnostics.

pub mod audit;
pub mod bv;
pub mod dissipation;
mod error;
pub mod family;
pub mod flow;
pub mod systems;
pub mod transition;

pub use error::{Error, Result};
