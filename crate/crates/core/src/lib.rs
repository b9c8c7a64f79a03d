//! Quenching-time simulation and time-optimal control for three singular
//! planar ODE systems `y' = f(y) + B(t)u(t)`, `‖u(t)‖ ≤ ρ0`.
//!
//! * [`fields`]: the vector fields, Jacobians and seed regions.
//! * [`controls`]: admissible controls, `B(t)`, problem specifications.
//! * [`integrator`]: adaptive integration to the quench and its extrapolation.
//! * [`analysis`]: sample-based certificates for bounds, regions and rates.
//! * [`pmp`]: adjoint and variational equations, maximum-principle checks.
//! * [`optimizer`]: brute force, forward-backward sweep and simplex search.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod controls;
pub mod fields;
pub mod integrator;
pub mod optimizer;
pub mod pmp;
pub mod sampling;

use thiserror::Error;

pub use analysis::{CertificateReport, RegionParams};
pub use controls::{ControlSignal, Extension, MatrixSignal, PiecewiseControl, ProblemSpec};
pub use fields::{Branch, FieldKind, Matrix2, State, Vec2};
pub use integrator::{IntegratorConfig, QuenchEstimate, Trajectory};
pub use optimizer::{Method, SearchConfig, SearchResult};
pub use pmp::{AdjointPath, PMPCertificate, SensitivityPath};

/// Union of the module errors, for callers that drive several stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] fields::FieldError),
    #[error(transparent)]
    Control(#[from] controls::ControlError),
    #[error(transparent)]
    Integrator(#[from] integrator::IntegratorError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Pmp(#[from] pmp::PmpError),
    #[error(transparent)]
    Optimizer(#[from] optimizer::OptimizerError),
}
