//! Registration-guided least-squares waveform inversion.
//!
//! Modules, bottom up: [`signal`] (traces, transforms, LFA), [`spline`]
//! (warp parameterization), [`registration`] (multiscale Newton trace
//! registration), [`wave`] (2D acoustic modeling and adjoint-state
//! gradients), [`adjoint_source`], [`inversion`], [`experiments`] (the
//! synthetic cases) and [`io`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint_source;
pub mod error;
pub mod experiments;
pub mod inversion;
pub mod io;
pub mod registration;
pub mod signal;
pub mod spline;
pub mod wave;

pub use adjoint_source::{AdjointSourceSpec, MisfitMode};
pub use error::{Error, Result};
pub use experiments::{CaseId, Scenario, ScenarioManifest, ScenarioSpec};
pub use inversion::{ConvergenceLog, InversionConfig, IterationRecord, StepRule};
pub use registration::{RegistrationResult, SweepSchedule};
pub use signal::{FrequencyBand, LfaKind, Trace};
pub use spline::{SplineBasis, WarpModel};
pub use wave::{
    AcquisitionGeometry, PmlConfig, ShotGather, ShotGeometry, SolverParams, SourceTerm, VelocityModel,
};
