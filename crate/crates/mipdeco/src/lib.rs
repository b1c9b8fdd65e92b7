//! Mixed-integer PDE-constrained optimization on the unit square.
//!
//! The crate discretizes heat-type and convection-diffusion control problems
//! with finite elements, condenses the time dimension into block-structured
//! all-at-once operators, optionally compresses the state space by balanced
//! truncation, and solves the resulting binary source-placement problem with
//! a penalty homotopy driven by an inexact interior-point subsolver.
//!
//! Module map:
//! - [`mesh`]: structured grids, FEM assembly, source layouts, observation box
//! - [`spacetime`]: time grid, all-at-once operators, penalty objective
//! - [`reduction`]: Gramian factors, Hankel spectrum, balanced truncation
//! - [`krylov`]: GMRES, the interior-point Newton operator and preconditioner
//! - [`ipm`]: the inexact interior-point subsolver
//! - [`ipa`]: rounding, perturbation search and the penalty homotopy
//! - [`harness`]: instance generation, experiments, metrics, configuration

pub mod error;
pub mod harness;
pub mod ipa;
pub mod ipm;
pub mod krylov;
pub mod linalg;
pub mod mesh;
pub mod reduction;
pub mod spacetime;

pub use error::{Error, Result};
