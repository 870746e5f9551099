//! Learned moment closures for 1D multifrequency thermal radiation transport.
//!
//! The pipeline in this crate goes end to end: a deterministic-characteristics
//! transport solver generates moment data on `(e, F, T, sigma_E E)`, a weak-form
//! regression stage identifies a sparse hyperbolic balance law for those moments
//! under physical constraints (black-body equilibria, hyperbolicity, source
//! stability, reflection symmetry), and a WENO5/RK45 finite-volume solver
//! integrates the learned system forward for evaluation and parameter sweeps.
//!
//! Modules map onto pipeline stages:
//!
//! - [`physics`]: opacity laws, Planckian integrals, the `kappa_L` dimensionless number
//! - [`kinetic`]: characteristics transport reference solver
//! - [`dataset`]: gridded moment data with bit-exact persistence
//! - [`termlib`]: candidate term libraries with reflection symmetry built in
//! - [`weakform`]: test functions and weak-system assembly
//! - [`constraints`]: equality/inequality constraint assembly and audits
//! - [`qp`]: dense active-set quadratic programming
//! - [`mstls`]: constrained sequentially-thresholded sparse regression
//! - [`closure`]: closure models and log-linear parametrization
//! - [`solver`]: forward finite-volume solver and reference closures
//! - [`evaluate`]: error metrics and sweep reports
//! - [`pipeline`]: configuration and subcommand orchestration

pub mod closure;
pub mod constraints;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod kinetic;
pub mod mstls;
pub mod physics;
pub mod pipeline;
pub mod qp;
pub mod quad;
pub mod solver;
pub mod termlib;
pub mod weakform;

pub use error::{Error, Result};
