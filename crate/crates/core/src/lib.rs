//! Power flow for unbalanced multi-phase distribution feeders: a nonlinear
//! fixed-point reference solver, a rotated first-order Taylor linear
//! solver, and regression models that learn the linearization error from
//! historical operating data.

// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admittance;
pub mod error;
pub mod eval;
pub mod feeder;
mod linalg;
pub mod network;
pub mod pf;
pub mod regress;
pub mod scenario;
pub mod taylor;

pub use admittance::{build_admittance, AdmittanceSystem};
pub use error::{Error, Result};
pub use feeder::{Feeder, FeederFile};
pub use network::{validate_network, Bus, Line, Phase, PhaseIndex, PhaseSet, PhasedNetwork, ValidationReport};
pub use pf::{power_residual, solve_nonlinear, Method, NonlinearConfig, NonlinearSolver, OperatingPoint, PfSolution};
pub use regress::{
    hybrid_solve, predict_errors, standardize_fit, train_lr, train_svr, ErrorModel, Exec, FeatureVector,
    HybridSolver, ModelKind, SvrParams, TargetKind, TrainingSet,
};
pub use taylor::{
    assemble_linear, linearization_error, rotation_vector, solve_taylor, ErrorVector, LinearSystem, RotationVector,
    TaylorSolver,
};
