//! Estimation of sharp upper and lower bounds on the conditional average
//! treatment effect (CATE) under the marginal sensitivity model.
//!
//! The centerpiece is the B-Learner: a two-stage meta-algorithm that
//! cross-fits nuisance models (propensity, conditional quantiles, conditional
//! value at risk), assembles Neyman-orthogonal pseudo-outcomes for the bound
//! at a user-chosen odds-ratio level `Λ ≥ 1`, and regresses those
//! pseudo-outcomes on covariates to obtain bound functions `x ↦ (τ̂⁻, τ̂⁺)`.
//!
//! Modules:
//! - [`domain`] — datasets, sensitivity parameters, fold assignment.
//! - [`learners`] — weight-producing smoothers (RBF kernel, CART forest),
//!   weighted quantiles/CVaR, propensity models.
//! - [`pseudo`] — the pseudo-outcome formulas, pure and stateless.
//! - [`blearner`] — cross-fitting, second stages, and the plug-in and
//!   oracle baseline estimators.
//! - [`dgp`] — synthetic data generators with closed-form oracle nuisances
//!   and validated normal-distribution numerics.
//! - [`exec`] — deterministic data-parallel helpers (rayon when the
//!   `parallel` feature is on, sequential otherwise).

pub mod blearner;
pub mod dgp;
pub mod domain;
pub mod exec;
pub mod learners;
pub mod pseudo;

pub use domain::{
    assign_folds, make_sensitivity, validate_dataset, BoundPair, BoundSide, Dataset, DomainError,
    FoldAssignment, FoldScheme, SensitivityParams,
};
