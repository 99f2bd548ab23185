//! First-stage nuisance learners.
//!
//! Every conditional-distribution quantity (mean, quantiles, CVaR) is
//! computed from a single weight-producing smoother per training set: a
//! fitted [`WeightSmoother`] maps a query point to a simplex of weights over
//! its training rows, and the mean, the weighted quantiles at levels α/1−α,
//! and the CVaR tail sums all reuse that one weight vector. Sharing weights
//! keeps the per-arm nuisances internally consistent (CVaR₊ ≥ mean ≥ CVaR₋,
//! quantiles never cross).

mod forest;
mod kernel;
mod logistic;
mod quantile;

pub use forest::{ForestSmoother, ForestSpec, LeafOccupancy, MinLeaf};
pub use kernel::{KernelSmoother, KernelSpec};
pub use logistic::{fit_logistic, LogisticModel};
pub use quantile::{weighted_cvar, weighted_quantile, ArmEval, QuantileCvarModel};

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::domain::Dataset;
use crate::domain::SensitivityParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("weights must sum to 1, got {sum}")]
    BadWeights { sum: f64 },
    #[error("no samples with A = {arm}")]
    EmptyArm { arm: u8 },
    #[error("both treatment arms required for propensity fitting")]
    SingleArm,
    #[error("IRLS did not converge within {iterations} iterations")]
    IrlsDiverged { iterations: usize },
    #[error("invalid hyperparameter: {0}")]
    BadSpec(String),
}

/// A fitted smoother: maps a query point to nonnegative weights over its
/// training rows, summing to one.
pub trait WeightSmoother: Send + Sync {
    fn weights(&self, x: ArrayView1<f64>) -> Vec<f64>;
    fn n_train(&self) -> usize;
}

/// Which smoother family to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum SmootherSpec {
    Kernel(KernelSpec),
    Forest(ForestSpec),
}

impl SmootherSpec {
    pub fn kernel_default() -> Self {
        SmootherSpec::Kernel(KernelSpec::default())
    }

    pub fn forest_default() -> Self {
        SmootherSpec::Forest(ForestSpec::default())
    }
}

/// Fits the configured smoother. `targets` drive forest splits and are
/// ignored by the kernel smoother.
pub fn fit_smoother(
    spec: &SmootherSpec,
    x: ArrayView2<f64>,
    targets: Option<&[f64]>,
    seed: u64,
) -> Result<Box<dyn WeightSmoother>, LearnerError> {
    if x.nrows() == 0 {
        return Err(LearnerError::EmptyInput);
    }
    match spec {
        SmootherSpec::Kernel(k) => Ok(Box::new(KernelSmoother::fit(x, k)?)),
        SmootherSpec::Forest(f) => Ok(Box::new(ForestSmoother::fit(x, targets, f, seed)?)),
    }
}

/// Smoother-backed regression: `predict(x) = Σᵢ wᵢ(x)·targetᵢ`.
///
/// Serves both the outcome regression μ̂ and the second-stage pseudo-outcome
/// regression.
pub struct RegressionModel {
    smoother: Box<dyn WeightSmoother>,
    targets: Vec<f64>,
}

impl RegressionModel {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let w = self.smoother.weights(x);
        w.iter().zip(&self.targets).map(|(wi, ti)| wi * ti).sum()
    }

    pub fn n_train(&self) -> usize {
        self.targets.len()
    }
}

/// Fits a smoother to `(x, targets)` and wraps it as a regression.
pub fn fit_mean_regression(
    x: ArrayView2<f64>,
    targets: &[f64],
    spec: &SmootherSpec,
    seed: u64,
) -> Result<RegressionModel, LearnerError> {
    if x.nrows() < 2 {
        return Err(LearnerError::TooFewSamples {
            needed: 2,
            got: x.nrows(),
        });
    }
    if x.nrows() != targets.len() {
        return Err(LearnerError::BadSpec(format!(
            "{} rows vs {} targets",
            x.nrows(),
            targets.len()
        )));
    }
    let smoother = fit_smoother(spec, x, Some(targets), seed)?;
    Ok(RegressionModel {
        smoother,
        targets: targets.to_vec(),
    })
}

/// Propensity model family.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySpec {
    /// Logistic regression fit by IRLS.
    Logistic,
    /// Smoother-based: weighted mean of the treatment indicator.
    Kernel(KernelSpec),
    /// Forest classifier: leaf frequency of the treatment indicator.
    Forest(ForestSpec),
}

enum PropensityInner {
    Logistic(LogisticModel),
    Smoother { smoother: Box<dyn WeightSmoother>, a: Vec<f64> },
}

/// A fitted propensity model with output clipped to `[ε, 1−ε]`.
pub struct PropensityModel {
    inner: PropensityInner,
    clip_eps: f64,
}

impl PropensityModel {
    pub fn predict_e(&self, x: ArrayView1<f64>) -> f64 {
        let raw = match &self.inner {
            PropensityInner::Logistic(m) => m.predict_p(x),
            PropensityInner::Smoother { smoother, a } => {
                let w = smoother.weights(x);
                w.iter().zip(a).map(|(wi, ai)| wi * ai).sum()
            }
        };
        raw.clamp(self.clip_eps, 1.0 - self.clip_eps)
    }

    pub fn clip_eps(&self) -> f64 {
        self.clip_eps
    }
}

/// Default propensity clip.
pub const DEFAULT_CLIP_EPS: f64 = 0.01;

/// Fits a propensity model on `(x, a)`. Requires both arms.
pub fn fit_propensity(
    x: ArrayView2<f64>,
    a: &[u8],
    spec: &PropensitySpec,
    clip_eps: f64,
    seed: u64,
) -> Result<PropensityModel, LearnerError> {
    if x.nrows() == 0 {
        return Err(LearnerError::EmptyInput);
    }
    if !(0.0..0.5).contains(&clip_eps) {
        return Err(LearnerError::BadSpec(format!("clip_eps {clip_eps}")));
    }
    let treated = a.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == a.len() {
        return Err(LearnerError::SingleArm);
    }
    let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let inner = match spec {
        PropensitySpec::Logistic => PropensityInner::Logistic(fit_logistic(x, a, 100, 1e-8)?),
        PropensitySpec::Kernel(k) => PropensityInner::Smoother {
            smoother: Box::new(KernelSmoother::fit(x, k)?),
            a: af,
        },
        PropensitySpec::Forest(f) => PropensityInner::Smoother {
            smoother: Box::new(ForestSmoother::fit(x, Some(&af), f, seed)?),
            a: af,
        },
    };
    Ok(PropensityModel { inner, clip_eps })
}

/// Fits the shared-weights quantile/CVaR/mean model on one treatment arm.
pub fn fit_quantile_cvar(
    ds: &Dataset,
    arm: u8,
    spec: &SmootherSpec,
    s: &SensitivityParams,
    seed: u64,
) -> Result<QuantileCvarModel, LearnerError> {
    let rows = ds.arm_indices(arm);
    if rows.is_empty() {
        return Err(LearnerError::EmptyArm { arm });
    }
    let d = ds.dim();
    let mut x = Array2::zeros((rows.len(), d));
    let mut y = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).assign(&ds.x.row(i));
        y.push(ds.y[i]);
    }
    let smoother = fit_smoother(spec, x.view(), Some(&y), seed)?;
    Ok(QuantileCvarModel::new(smoother, y, *s, arm))
}
