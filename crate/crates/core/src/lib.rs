//! Inclusive synthetic control (iSCM).
//!
//! Estimates the effect of an intervention on a main treated unit when some
//! donor units are themselves affected, by fitting every affected unit in
//! turn and solving the resulting linear system for all effects at once.
//!
//! The numeric core is generic over [`Scalar`] (`f32`, `f64`); the linear
//! system routines only need [`Field`] and also run over exact rationals.
//! Aliases for the common `f64` case live at the crate root.

pub mod diagnostics;
pub mod error;
pub mod export;
pub mod inference;
pub mod iscm;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod scalar;
pub mod scm;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::{Field, Scalar};

pub use panel::{load_panel, read_panel, PanelSchema, PredictorSpec, RoleAssignment};
pub use pipeline::{fit_system, run_iscm, solve_run};
pub use scm::{fit_unit, Estimator, FitOptions, SolverOptions, VSearchOptions};

pub type Panel = panel::PanelDataset<f64>;
pub type Fit = scm::ScmFit<f64>;
pub type Weights = scm::WeightVector<f64>;
pub type Matrix = linalg::DenseMatrix<f64>;
pub type Omega = iscm::OmegaSystem<f64>;
pub type Run = pipeline::IscmRun<f64>;
pub type Effects = pipeline::UnitEffects<f64>;
