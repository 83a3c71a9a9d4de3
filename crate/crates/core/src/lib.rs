//! Finite-volume solver for the chemotactic virus-dynamics model and the
//! Keller-Segel comparison systems, with diagnostics and experiment drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod experiments;
pub mod grid;
pub mod initial;
pub mod linalg;
pub mod models;
pub mod stepper;

pub use diagnostics::{classify, compute_row, Classification, DiagnosticsError, DiagnosticsRow, RunOutcome};
pub use experiments::{
    convergence_study, estimate_critical_alpha, ode_phase_study, run_observed, run_single, run_sweep, ConvergenceKind,
    ExperimentError, RunRecord, RunSpec, SweepResult, SweepSpec,
};
pub use grid::{build_grid, Field, Geometry, Grid, GridError, GridSpec};
pub use initial::{sample_state, InitialData};
pub use models::{ConversionKind, ConversionSpec, ModelError, ModelSpec, State, SystemKind};
pub use stepper::{integrate, step_imex, IntegrationReport, Scheme, StepError, StepperConfig, Termination};
