//! Nonparametric practical-identifiability analysis for nonlinear
//! mixed-effects ODE models.
//!
//! The crate is organized bottom-up:
//!
//! - [`ode`]: adaptive Dormand–Prince integration with bolus dose events.
//! - [`models`]: Friberg neutropenia (with Zalypsis PK), target cell limited
//!   viral dynamics, and exponential growth.
//! - [`population`]: lognormal population laws, virtual populations and
//!   synthetic trial datasets.
//! - [`nlme`]: SAEM estimation, importance-sampling likelihood, AIC and
//!   multi-start orchestration.
//! - [`identifiability`]: two-sample Kolmogorov–Smirnov tests, overlapping
//!   indices and clustering of fits.
//! - [`appendix`]: Monte Carlo likelihood landscapes for exponential growth.

pub mod appendix;
pub mod identifiability;
pub mod models;
pub mod nlme;
pub mod ode;
pub mod population;
pub mod rng;
pub mod stats;

pub use identifiability::{ComparisonReport, DensitySpec, SampleSet};
pub use models::{ModelError, ModelSpec};
pub use nlme::{ErrorModel, FitResult, SaemConfig, StatModelSpec};
pub use ode::{DoseEvent, IntegratorConfig, StateVector, Trajectory};
pub use population::{PopulationDistribution, StudyDesign, Transform, TrialDataset};
