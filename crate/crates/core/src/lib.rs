//! Local average treatment effect (LATE) estimation when the outcome is
//! subject to attrition, together with a simulation lab for checking when
//! latent ignorability can hold.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: observations with missing outcomes, compliance types,
//!   dataset validation and descriptive statistics.
//! - [`dgp`]: structural simulators (parametric threshold model, correlated
//!   errors, complier-shift and nonparametric forms) and the latent
//!   ignorability gap diagnostic.
//! - [`nuisance`]: logistic models fitted by IRLS for the instrument
//!   propensity, treatment shares and response probabilities.
//! - [`estimators`]: Wald on respondents, MAR weighting, the LI+MAR mixture
//!   decomposition and the simulation-only oracle.
//! - [`inference`]: full-pipeline bootstrap with quantile p-values and the
//!   Monte Carlo harness.

pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod rng;
pub mod stats;

pub use data::{classify_compliance, describe, validate, ComplianceType, Dataset, Description, Observation};
pub use dgp::{
    li_gap, simulate, simulate_nonparametric, true_late, CovariateEffect, ErrorStructure, LiGapReport,
    MomentFunction, NonparametricSpec, ParametricDgpConfig, SimulatedDataset,
};
pub use error::{Error, Result};
pub use estimators::{
    estimate, late_li_mar, late_mar, late_oracle, wald_respondents, EffectEstimate, EstimatorId, EstimatorOptions,
};
pub use inference::{bootstrap, monte_carlo, BootstrapResult, MonteCarloReport};
pub use nuisance::{fit_all, fit_logistic, LogisticModel, LogisticOptions, NuisanceFits, NuisanceOptions};
