//! Time stepping for nonnegative thin fluid layers.
//!
//! Each implicit step is a nonlinear complementarity problem: the thickness
//! is nonnegative, the discrete mass-balance residual is nonnegative, and at
//! least one of them vanishes in every cell. Solutions come with a per-step
//! mass ledger (climate input, retreat loss, boundary leak, cell slop) whose
//! balance closes to rounding error.
//!
//! Modules:
//!
//! * [`mesh`]: finite-volume cell/edge geometry, with a dual mesh in 1D.
//! * [`flux`]: p-Laplacian, doubly-nonlinear, advective and nonlocal fluxes;
//!   climate sources; a-priori time-step bounds.
//! * [`timestepping`]: stage problems for theta-methods and two DIRK schemes.
//! * [`solver`]: residual assembly, the active-set Newton solve, certificates.
//! * [`conservation`]: the mass ledger.
//! * [`inequalities`]: vector inequalities, Poincaré constants and fuzzing.
//! * [`scenarios`]: the experiment catalog and refinement studies.
//! * [`config`]: JSON run descriptions.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod conservation;
pub mod error;
pub mod flux;
pub mod inequalities;
mod linalg;
pub mod mesh;
pub mod scenarios;
pub mod solver;
pub mod timestepping;

pub use error::{Error, Result};
pub use flux::{FluxModel, SourceModel, VelocityField};
pub use mesh::{Mesh, Point};
pub use solver::{Backend, Discretization, SolveReport, SolverOptions, ThicknessField};
pub use timestepping::{SchemeSpec, StageProblem};
