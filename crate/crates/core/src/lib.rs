//! Average treatment effect estimation and inference under stratified
//! randomization with pluggable covariate adjustment.
//!
//! The crate is organised along the life cycle of a trial analysis:
//!
//! - [`data`]: the [`TrialDataset`] model, per-stratum counts and CSV ingestion.
//! - [`randomize`]: simple, stratified block, biased coin and minimization assignment.
//! - [`datagen`]: synthetic generators with known potential outcomes.
//! - [`adjust`]: projection-function learners (OLS, lasso, local linear kernel,
//!   natural splines, trees, forests, boosting, a one-hidden-layer network).
//! - [`estimate`]: the stratified plug-in estimator, its variance components and
//!   Wald intervals.
//! - [`crossfit`]: M-fold cross-fitted estimation.
//! - [`sim`]: seeded Monte Carlo replication, summaries and table rendering.

pub mod adjust;
pub mod crossfit;
pub mod data;
pub mod datagen;
pub mod error;
pub mod estimate;
mod linalg;
pub mod randomize;
pub mod sim;

pub use adjust::{AdjusterKind, AdjusterSpec, Hyperparams, ProjectionFit};
pub use crossfit::{crossfit_estimate, partition_folds, CrossFitResult, FoldPartition};
pub use data::{Covariates, CsvSchema, StratumStats, TrialDataset, Violation};
pub use datagen::{ModelSpec, SyntheticSample};
pub use error::{Error, Result};
pub use estimate::{adjusted_estimate, naive_estimate, variance_components, wald_ci, EffectEstimate};
pub use randomize::{RandomizerConfig, RandomizerKind};
pub use sim::{run_panel, run_scenario, summarize, EstimatorSpec, ScenarioConfig, SimulationSummary};
