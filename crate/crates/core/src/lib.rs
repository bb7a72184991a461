//! Estimation of conditional marginal effects (CME) of a treatment `D` on an
//! outcome `Y` across a moderator `X`.
//!
//! The estimator ladder runs from the linear interaction model through
//! binning and local-linear kernel regression to doubly robust (AIPW),
//! post-double-selection LASSO and double machine learning estimators.
//! Every estimator returns a [`CmeCurve`] with pointwise and sup-t uniform
//! bootstrap bands. The [`dgp`] module provides simulation designs with
//! analytic CME oracles and [`mc`] runs coverage studies against them.

pub mod bands;
pub mod debiased;
pub mod data;
pub mod dgp;
pub mod error;
pub mod kernel;
pub mod linear;
pub mod mc;
pub mod numerics;
pub mod pipeline;

pub use data::{
    ingest_csv, make_grid, Band, Bandwidth, CmeCurve, ColumnRoles, CurveMetadata, Dataset,
    EstimationRequest, EstimatorKind, GridSpec, MissingPolicy,
};
pub use error::{CmeError, Result};
pub use debiased::{fit_nuisances, Learner, NuisanceFits};
pub use kernel::{KernelSpec, KernelType};
pub use mc::{overlap_diagnostic, run_mc, McReport, OverlapDiagnostic};
pub use pipeline::{estimate, estimate_on_grid};
