//! The meta-learner: cross-fitted nuisances, pseudo-outcome construction,
//! second-stage regression, and the plug-in and oracle baselines.
//!
//! `fit_blearner` runs the full two-stage procedure: nuisances are fit per
//! fold on the complement sample, each observation's pseudo-outcome uses
//! only models that never saw it, and the upper/lower pseudo-outcomes are
//! regressed on covariates independently. `fit_plugin` substitutes fitted
//! nuisances straight into the bound identification formulas (no debiasing,
//! no cross-fitting) and `fit_oracle` runs the second stage on
//! pseudo-outcomes built from exact nuisance functions.

use ndarray::{ArrayView1, ArrayView2};
use thiserror::Error;

use crate::domain::{
    assign_folds, validate_dataset, BoundPair, BoundSide, Dataset, DomainError, FoldAssignment,
    FoldScheme, SensitivityParams,
};
use crate::exec;
use crate::learners::{
    fit_mean_regression, fit_propensity, fit_quantile_cvar, ForestSmoother, ForestSpec,
    KernelSmoother, LeafOccupancy, LearnerError, PropensityModel, PropensitySpec,
    QuantileCvarModel, RegressionModel, SmootherSpec, DEFAULT_CLIP_EPS,
};
use crate::pseudo::{phi_sample, rho_compose, NuisanceEval, PseudoOutcomes};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("nuisance fit failed in fold {fold}{}: {source}", arm.map(|a| format!(", arm {a}")).unwrap_or_default())]
    Nuisance {
        fold: usize,
        arm: Option<u8>,
        source: LearnerError,
    },
    #[error("fold {fold} training complement has no samples with A = {arm}")]
    FoldMissingArm { fold: usize, arm: u8 },
    #[error("second stage failed: {0}")]
    SecondStage(#[from] LearnerError),
    #[error("half-sample smoother needs at least 10 samples per half, got {got}")]
    HalvesTooSmall { got: usize },
}

/// How ρ̂± is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoRoute {
    /// Compose Λ⁻¹·μ̂ + (1−Λ⁻¹)·CVaR̂± from the shared-weights arm model.
    Composed,
    /// Regress R±(y, q̂) directly on X with a nested half split: q̂ from one
    /// half of the arm subsample, the R± regression on the other.
    DirectR,
}

/// First-stage configuration.
#[derive(Debug, Clone)]
pub struct NuisanceSpec {
    pub propensity: PropensitySpec,
    pub smoother: SmootherSpec,
    pub clip_eps: f64,
    pub rho_route: RhoRoute,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self {
            propensity: PropensitySpec::Forest(ForestSpec::default()),
            smoother: SmootherSpec::forest_default(),
            clip_eps: DEFAULT_CLIP_EPS,
            rho_route: RhoRoute::Composed,
        }
    }
}

/// Second-stage configuration.
#[derive(Debug, Clone)]
pub enum SecondStageSpec {
    /// Least-squares regression of the pseudo-outcomes with the given learner.
    Erm(SmootherSpec),
    /// Linear smoother with weights learned on one half-sample and
    /// pseudo-outcome values taken from the other.
    HalfSmoother(SmootherSpec),
}

/// Everything `fit_blearner` needs besides the data and Λ.
#[derive(Debug, Clone)]
pub struct BLearnerConfig {
    pub nuisance: NuisanceSpec,
    pub second_stage: SecondStageSpec,
    pub folds: usize,
    pub fold_scheme: FoldScheme,
    pub seed: u64,
    /// Optional post-hoc clamp lower ← min(lower, upper). Off by default so
    /// estimator defects stay visible.
    pub clamp_bounds: bool,
}

impl Default for BLearnerConfig {
    fn default() -> Self {
        Self {
            nuisance: NuisanceSpec::default(),
            second_stage: SecondStageSpec::Erm(SmootherSpec::forest_default()),
            folds: 5,
            fold_scheme: FoldScheme::Modular,
            seed: 0,
            clamp_bounds: false,
        }
    }
}

// Per-(fold, arm) conditional-outcome models.
enum ArmNuisance {
    Shared(QuantileCvarModel),
    Direct {
        q_model: QuantileCvarModel,
        mu: RegressionModel,
        rho_plus: RegressionModel,
        rho_minus: RegressionModel,
    },
}

/// (μ, q±, ρ±) for one arm at one point.
#[derive(Debug, Clone, Copy)]
pub struct ArmNuisanceEval {
    pub mu: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

impl ArmNuisance {
    fn eval(&self, x: ArrayView1<f64>, s: &SensitivityParams) -> ArmNuisanceEval {
        match self {
            ArmNuisance::Shared(model) => {
                let e = model.eval(x);
                ArmNuisanceEval {
                    mu: e.mu,
                    q_plus: e.q_plus,
                    q_minus: e.q_minus,
                    rho_plus: rho_compose(e.mu, e.cvar_plus, s),
                    rho_minus: rho_compose(e.mu, e.cvar_minus, s),
                }
            }
            ArmNuisance::Direct {
                q_model,
                mu,
                rho_plus,
                rho_minus,
            } => {
                let q = q_model.eval(x);
                ArmNuisanceEval {
                    mu: mu.predict(x),
                    q_plus: q.q_plus,
                    q_minus: q.q_minus,
                    rho_plus: rho_plus.predict(x),
                    rho_minus: rho_minus.predict(x),
                }
            }
        }
    }
}

struct FoldNuisance {
    propensity: PropensityModel,
    arms: [ArmNuisance; 2],
}

/// The cross-fitted first stage: one nuisance bundle per fold, each trained
/// only on that fold's complement. Evaluable at any covariate point.
pub struct NuisanceSet {
    folds: Vec<FoldNuisance>,
    s: SensitivityParams,
    pub fold_assignment: FoldAssignment,
    /// Training rows used by each fold's models (for hygiene checks).
    pub train_indices: Vec<Vec<usize>>,
}

impl NuisanceSet {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Full nuisance evaluation using fold `k`'s models.
    pub fn eval(&self, k: usize, x: ArrayView1<f64>) -> NuisanceEval {
        let fold = &self.folds[k];
        let e = fold.propensity.predict_e(x);
        let a1 = fold.arms[1].eval(x, &self.s);
        let a0 = fold.arms[0].eval(x, &self.s);
        NuisanceEval {
            e,
            mu1: a1.mu,
            mu0: a0.mu,
            q_plus_1: a1.q_plus,
            q_minus_1: a1.q_minus,
            q_plus_0: a0.q_plus,
            q_minus_0: a0.q_minus,
            rho_plus_1: a1.rho_plus,
            rho_minus_1: a1.rho_minus,
            rho_plus_0: a0.rho_plus,
            rho_minus_0: a0.rho_minus,
        }
    }
}

fn fit_arm_nuisance(
    ds: &Dataset,
    arm: u8,
    spec: &NuisanceSpec,
    s: &SensitivityParams,
    seed: u64,
) -> Result<ArmNuisance, LearnerError> {
    match spec.rho_route {
        RhoRoute::Composed => Ok(ArmNuisance::Shared(fit_quantile_cvar(
            ds,
            arm,
            &spec.smoother,
            s,
            seed,
        )?)),
        RhoRoute::DirectR => {
            let rows = ds.arm_indices(arm);
            if rows.len() < 4 {
                return Err(LearnerError::TooFewSamples {
                    needed: 4,
                    got: rows.len(),
                });
            }
            // nested split: quantiles from even positions, R± regression on odd
            let half_q: Vec<usize> = rows.iter().copied().step_by(2).collect();
            let half_r: Vec<usize> = rows.iter().copied().skip(1).step_by(2).collect();
            let ds_q = ds.subset(&half_q);
            let q_model =
                fit_quantile_cvar(&ds_q, arm, &spec.smoother, s, exec::derive_seed(seed, 0))?;

            let ds_r = ds.subset(&half_r);
            let mut r_plus = Vec::with_capacity(ds_r.n());
            let mut r_minus = Vec::with_capacity(ds_r.n());
            for i in 0..ds_r.n() {
                let x = ds_r.x.row(i);
                let q = q_model.eval(x);
                r_plus.push(crate::pseudo::r_value(ds_r.y[i], q.q_plus, BoundSide::Upper, s));
                r_minus.push(crate::pseudo::r_value(ds_r.y[i], q.q_minus, BoundSide::Lower, s));
            }
            let rho_plus = fit_mean_regression(
                ds_r.x.view(),
                &r_plus,
                &spec.smoother,
                exec::derive_seed(seed, 1),
            )?;
            let rho_minus = fit_mean_regression(
                ds_r.x.view(),
                &r_minus,
                &spec.smoother,
                exec::derive_seed(seed, 2),
            )?;
            let ds_arm = ds.subset(&rows);
            let mu = fit_mean_regression(
                ds_arm.x.view(),
                &ds_arm.y,
                &spec.smoother,
                exec::derive_seed(seed, 3),
            )?;
            Ok(ArmNuisance::Direct {
                q_model,
                mu,
                rho_plus,
                rho_minus,
            })
        }
    }
}

/// Cross-fitted pseudo-outcomes: for each fold, nuisances are fit on the
/// complement and evaluated at the held-out rows, so no sample's φ depends
/// on a model trained on it.
pub fn crossfit_pseudo(
    ds: &Dataset,
    s: &SensitivityParams,
    spec: &NuisanceSpec,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<(Vec<PseudoOutcomes>, NuisanceSet), EstimatorError> {
    validate_dataset(ds, true)?;
    let k = folds.k;
    let fitted: Vec<Result<(FoldNuisance, Vec<usize>), EstimatorError>> =
        exec::par_map(k, |fold| {
            let train = folds.complement(fold);
            let sub = ds.subset(&train);
            for arm in [0u8, 1] {
                if !sub.a.iter().any(|&a| a == arm) {
                    return Err(EstimatorError::FoldMissingArm { fold, arm });
                }
            }
            let fold_seed = exec::derive_seed2(seed, 1, fold as u64);
            let propensity = fit_propensity(
                sub.x.view(),
                &sub.a,
                &spec.propensity,
                spec.clip_eps,
                exec::derive_seed(fold_seed, 0),
            )
            .map_err(|source| EstimatorError::Nuisance {
                fold,
                arm: None,
                source,
            })?;
            let mut arms = Vec::with_capacity(2);
            for arm in [0u8, 1] {
                arms.push(
                    fit_arm_nuisance(&sub, arm, spec, s, exec::derive_seed(fold_seed, 1 + arm as u64))
                        .map_err(|source| EstimatorError::Nuisance {
                            fold,
                            arm: Some(arm),
                            source,
                        })?,
                );
            }
            let [arm0, arm1] = <[ArmNuisance; 2]>::try_from(arms)
                .unwrap_or_else(|_| unreachable!("two arms pushed"));
            Ok((
                FoldNuisance {
                    propensity,
                    arms: [arm0, arm1],
                },
                train,
            ))
        });

    let mut fold_models = Vec::with_capacity(k);
    let mut train_indices = Vec::with_capacity(k);
    for r in fitted {
        let (fold, train) = r?;
        fold_models.push(fold);
        train_indices.push(train);
    }
    let set = NuisanceSet {
        folds: fold_models,
        s: *s,
        fold_assignment: folds.clone(),
        train_indices,
    };

    let s_copy = *s;
    let phi = exec::par_chunk_map(ds.n(), 64, |i| {
        let nuis = set.eval(folds.fold_of[i], ds.x.row(i));
        phi_sample(&nuis, ds.a[i], ds.y[i], &s_copy)
    });
    Ok((phi, set))
}

/// ERM second stage: least-squares fit of the configured learner to
/// `(X, φ)`.
pub fn second_stage_erm(
    x: ArrayView2<f64>,
    phi: &[f64],
    spec: &SmootherSpec,
    seed: u64,
) -> Result<RegressionModel, LearnerError> {
    fit_mean_regression(x, phi, spec, seed)
}

/// Linear smoother second stage with held-out weights: the weighting
/// function is learned on `(x_structure, phi_structure)` and predictions
/// average `phi` over `x_values` rows.
pub struct HalfSmootherModel {
    weighter: HalfWeighter,
    phi: Vec<f64>,
}

enum HalfWeighter {
    Kernel(KernelSmoother),
    Forest {
        structure: ForestSmoother,
        occupancy: LeafOccupancy,
    },
}

impl HalfSmootherModel {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let w = match &self.weighter {
            HalfWeighter::Kernel(k) => {
                use crate::learners::WeightSmoother;
                k.weights(x)
            }
            HalfWeighter::Forest { structure, occupancy } => {
                structure.external_weights(occupancy, x)
            }
        };
        w.iter().zip(&self.phi).map(|(wi, pi)| wi * pi).sum()
    }
}

/// Builds the half-sample linear smoother. `x_structure`/`phi_structure`
/// carry the half used to learn the weighting function; `x_values`/`phi`
/// carry the half whose pseudo-outcomes are averaged.
pub fn second_stage_smoother(
    x_structure: ArrayView2<f64>,
    phi_structure: &[f64],
    x_values: ArrayView2<f64>,
    phi: &[f64],
    spec: &SmootherSpec,
    seed: u64,
) -> Result<HalfSmootherModel, EstimatorError> {
    let got = x_structure.nrows().min(x_values.nrows());
    if got < 10 {
        return Err(EstimatorError::HalvesTooSmall { got });
    }
    let weighter = match spec {
        SmootherSpec::Kernel(k) => {
            let fitted = KernelSmoother::fit(x_structure, k).map_err(EstimatorError::SecondStage)?;
            HalfWeighter::Kernel(fitted.reweight_rows(x_values))
        }
        SmootherSpec::Forest(f) => {
            let structure = ForestSmoother::fit(x_structure, Some(phi_structure), f, seed)
                .map_err(EstimatorError::SecondStage)?;
            let occupancy = structure.occupy(x_values);
            HalfWeighter::Forest { structure, occupancy }
        }
    };
    Ok(HalfSmootherModel {
        weighter,
        phi: phi.to_vec(),
    })
}

enum SecondStageModel {
    Erm(RegressionModel),
    Half(HalfSmootherModel),
}

impl SecondStageModel {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            SecondStageModel::Erm(m) => m.predict(x),
            SecondStageModel::Half(m) => m.predict(x),
        }
    }
}

// Full-sample nuisances backing the plug-in estimator.
struct PluginNuisances {
    propensity: PropensityModel,
    arms: [ArmNuisance; 2],
}

/// A fitted bound function `x ↦ (τ̂⁻(x), τ̂⁺(x))`.
pub struct BoundFunction {
    inner: BoundInner,
    lambda: f64,
    clamp: bool,
}

enum BoundInner {
    TwoStage {
        upper: SecondStageModel,
        lower: SecondStageModel,
    },
    Plugin {
        nuis: PluginNuisances,
        s: SensitivityParams,
    },
}

impl BoundFunction {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> BoundPair {
        let (lower, upper) = match &self.inner {
            BoundInner::TwoStage { upper, lower } => (lower.predict(x), upper.predict(x)),
            BoundInner::Plugin { nuis, s } => {
                let e = nuis.propensity.predict_e(x);
                let a1 = nuis.arms[1].eval(x, s);
                let a0 = nuis.arms[0].eval(x, s);
                let upper =
                    e * a1.mu + (1.0 - e) * a1.rho_plus - ((1.0 - e) * a0.mu + e * a0.rho_minus);
                let lower =
                    e * a1.mu + (1.0 - e) * a1.rho_minus - ((1.0 - e) * a0.mu + e * a0.rho_plus);
                (lower, upper)
            }
        };
        if self.clamp {
            BoundPair {
                lower: lower.min(upper),
                upper,
            }
        } else {
            BoundPair { lower, upper }
        }
    }

    /// Batch prediction, parallel over rows, output in row order.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Vec<BoundPair> {
        exec::par_chunk_map(x.nrows(), 64, |i| self.predict(x.row(i)))
    }
}

fn fit_second_stages(
    x: ArrayView2<f64>,
    phi_upper: &[f64],
    phi_lower: &[f64],
    spec: &SecondStageSpec,
    seed: u64,
) -> Result<(SecondStageModel, SecondStageModel), EstimatorError> {
    match spec {
        SecondStageSpec::Erm(sm) => {
            let upper = second_stage_erm(x, phi_upper, sm, seed)?;
            let lower = second_stage_erm(x, phi_lower, sm, seed)?;
            Ok((SecondStageModel::Erm(upper), SecondStageModel::Erm(lower)))
        }
        SecondStageSpec::HalfSmoother(sm) => {
            let n = x.nrows();
            let split = n / 2;
            let (xa, xb) = (x.slice(ndarray::s![..split, ..]), x.slice(ndarray::s![split.., ..]));
            let upper = second_stage_smoother(
                xa,
                &phi_upper[..split],
                xb,
                &phi_upper[split..],
                sm,
                seed,
            )?;
            let lower = second_stage_smoother(
                xa,
                &phi_lower[..split],
                xb,
                &phi_lower[split..],
                sm,
                seed,
            )?;
            Ok((SecondStageModel::Half(upper), SecondStageModel::Half(lower)))
        }
    }
}

/// Fits the full two-stage bound estimator.
pub fn fit_blearner(
    ds: &Dataset,
    s: &SensitivityParams,
    cfg: &BLearnerConfig,
) -> Result<BoundFunction, EstimatorError> {
    let folds = assign_folds(ds.n(), cfg.folds, cfg.fold_scheme, exec::derive_seed(cfg.seed, 0))?;
    let (phi, _set) = crossfit_pseudo(ds, s, &cfg.nuisance, &folds, cfg.seed)?;
    let phi_upper: Vec<f64> = phi.iter().map(|p| p.phi_tau_upper).collect();
    let phi_lower: Vec<f64> = phi.iter().map(|p| p.phi_tau_lower).collect();
    let (upper, lower) = fit_second_stages(
        ds.x.view(),
        &phi_upper,
        &phi_lower,
        &cfg.second_stage,
        exec::derive_seed(cfg.seed, 2),
    )?;
    Ok(BoundFunction {
        inner: BoundInner::TwoStage { upper, lower },
        lambda: s.lambda(),
        clamp: cfg.clamp_bounds,
    })
}

/// Fits the plug-in baseline: nuisances on the full sample, bounds by direct
/// substitution into the identification formulas.
pub fn fit_plugin(
    ds: &Dataset,
    s: &SensitivityParams,
    nuisance: &NuisanceSpec,
    seed: u64,
) -> Result<BoundFunction, EstimatorError> {
    validate_dataset(ds, true)?;
    let propensity = fit_propensity(
        ds.x.view(),
        &ds.a,
        &nuisance.propensity,
        nuisance.clip_eps,
        exec::derive_seed(seed, 10),
    )
    .map_err(|source| EstimatorError::Nuisance {
        fold: 0,
        arm: None,
        source,
    })?;
    let mut arms = Vec::with_capacity(2);
    for arm in [0u8, 1] {
        arms.push(
            fit_arm_nuisance(ds, arm, nuisance, s, exec::derive_seed(seed, 11 + arm as u64))
                .map_err(|source| EstimatorError::Nuisance {
                    fold: 0,
                    arm: Some(arm),
                    source,
                })?,
        );
    }
    let [arm0, arm1] =
        <[ArmNuisance; 2]>::try_from(arms).unwrap_or_else(|_| unreachable!("two arms pushed"));
    Ok(BoundFunction {
        inner: BoundInner::Plugin {
            nuis: PluginNuisances {
                propensity,
                arms: [arm0, arm1],
            },
            s: *s,
        },
        lambda: s.lambda(),
        clamp: false,
    })
}

/// Exact nuisance functions, supplied externally (e.g. closed forms of a
/// synthetic design).
pub trait NuisanceOracle: Sync {
    fn eval(&self, x: ArrayView1<f64>, s: &SensitivityParams) -> NuisanceEval;
}

/// Oracle pseudo-outcomes for a dataset: φ built from exact nuisances.
pub fn oracle_pseudo(
    ds: &Dataset,
    s: &SensitivityParams,
    oracle: &dyn NuisanceOracle,
) -> Vec<PseudoOutcomes> {
    let s_copy = *s;
    exec::par_chunk_map(ds.n(), 256, |i| {
        let nuis = oracle.eval(ds.x.row(i), &s_copy);
        phi_sample(&nuis, ds.a[i], ds.y[i], &s_copy)
    })
}

/// The oracle estimator: second stage on pseudo-outcomes with true
/// nuisances. No cross-fitting is involved since nothing is estimated in the
/// first stage.
pub fn fit_oracle(
    ds: &Dataset,
    s: &SensitivityParams,
    oracle: &dyn NuisanceOracle,
    second_stage: &SecondStageSpec,
    seed: u64,
) -> Result<BoundFunction, EstimatorError> {
    validate_dataset(ds, false)?;
    let phi = oracle_pseudo(ds, s, oracle);
    let phi_upper: Vec<f64> = phi.iter().map(|p| p.phi_tau_upper).collect();
    let phi_lower: Vec<f64> = phi.iter().map(|p| p.phi_tau_lower).collect();
    let (upper, lower) = fit_second_stages(
        ds.x.view(),
        &phi_upper,
        &phi_lower,
        second_stage,
        exec::derive_seed(seed, 2),
    )?;
    Ok(BoundFunction {
        inner: BoundInner::TwoStage { upper, lower },
        lambda: s.lambda(),
        clamp: false,
    })
}

/// Squared-error loss of a bound function against reference values on a test
/// design, one MSE per side.
pub fn mse_against(
    bounds: &BoundFunction,
    x: ArrayView2<f64>,
    truth_upper: &[f64],
    truth_lower: &[f64],
) -> (f64, f64) {
    let preds = bounds.predict_batch(x);
    let n = preds.len() as f64;
    let mut up = 0.0;
    let mut lo = 0.0;
    for (i, p) in preds.iter().enumerate() {
        up += (p.upper - truth_upper[i]).powi(2);
        lo += (p.lower - truth_lower[i]).powi(2);
    }
    (up / n, lo / n)
}

impl NuisanceOracle for crate::dgp::SyntheticOracle {
    fn eval(&self, x: ArrayView1<f64>, s: &SensitivityParams) -> NuisanceEval {
        self.nuisance_eval(x, s)
    }
}

/// Instrumented model-usage record for the cross-fit hygiene check: which
/// fold's models produced each sample's pseudo-outcome.
pub fn fold_usage(set: &NuisanceSet) -> Vec<(usize, Vec<usize>)> {
    (0..set.fold_assignment.n)
        .map(|i| {
            let fold = set.fold_assignment.fold_of[i];
            (fold, set.train_indices[fold].clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, SyntheticOracle};
    use crate::domain::make_sensitivity;
    use crate::learners::KernelSpec;
    use ndarray::Array1;

    const E: f64 = std::f64::consts::E;

    fn kernel_config(seed: u64) -> BLearnerConfig {
        BLearnerConfig {
            nuisance: NuisanceSpec {
                propensity: PropensitySpec::Kernel(KernelSpec::default()),
                smoother: SmootherSpec::kernel_default(),
                clip_eps: 0.01,
                rho_route: RhoRoute::Composed,
            },
            second_stage: SecondStageSpec::Erm(SmootherSpec::kernel_default()),
            folds: 2,
            fold_scheme: FoldScheme::Modular,
            seed,
            clamp_bounds: false,
        }
    }

    #[test]
    fn crossfit_hygiene_no_leakage() {
        let ds = dgp::sample_synthetic(40, 1);
        let s = make_sensitivity(2.0).unwrap();
        let folds = assign_folds(40, 4, FoldScheme::Modular, 0).unwrap();
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::Composed,
        };
        let (_, set) = crossfit_pseudo(&ds, &s, &spec, &folds, 3).unwrap();
        for (i, (fold, train)) in fold_usage(&set).iter().enumerate() {
            assert_eq!(*fold, i % 4);
            assert!(
                !train.contains(&i),
                "sample {i} appears in its own training set"
            );
        }
    }

    #[test]
    fn crossfit_bookkeeping_minimal() {
        // K = 2, n = 4 toy data: sample i scored by fold (i mod 2)'s models,
        // trained on the complementary indices.
        let ds = dgp::sample_synthetic(64, 2);
        let s = make_sensitivity(1.5).unwrap();
        let folds = assign_folds(64, 2, FoldScheme::Modular, 0).unwrap();
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::Composed,
        };
        let (phi, set) = crossfit_pseudo(&ds, &s, &spec, &folds, 3).unwrap();
        assert_eq!(phi.len(), 64);
        assert_eq!(set.train_indices[0], folds.complement(0));
        assert_eq!(set.train_indices[1], folds.complement(1));
        // directly recompute one sample's phi from the recorded fold models
        let i = 5;
        let nuis = set.eval(folds.fold_of[i], ds.x.row(i));
        let direct = phi_sample(&nuis, ds.a[i], ds.y[i], &s);
        assert_eq!(direct, phi[i]);
    }

    #[test]
    fn fold_missing_arm_is_reported() {
        // A alternates with the fold parity, so fold 0's complement (odd
        // indices) is all-control and lacks arm 1.
        let mut ds = dgp::sample_synthetic(8, 3);
        for i in 0..8 {
            ds.a[i] = u8::from(i % 2 == 0);
            ds.y[i] = if ds.a[i] == 1 {
                ds.y1.as_ref().unwrap()[i]
            } else {
                ds.y0.as_ref().unwrap()[i]
            };
        }
        let s = make_sensitivity(2.0).unwrap();
        let folds = assign_folds(8, 2, FoldScheme::Modular, 0).unwrap();
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::Composed,
        };
        match crossfit_pseudo(&ds, &s, &spec, &folds, 0) {
            Err(EstimatorError::FoldMissingArm { fold, arm }) => {
                assert_eq!(fold, 0);
                assert_eq!(arm, 1);
            }
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("expected FoldMissingArm"),
        }
    }

    #[test]
    fn lambda_one_phi_collapse_in_crossfit() {
        let ds = dgp::sample_synthetic(120, 4);
        let s = make_sensitivity(1.0).unwrap();
        let folds = assign_folds(120, 3, FoldScheme::Modular, 0).unwrap();
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::Composed,
        };
        let (phi, _) = crossfit_pseudo(&ds, &s, &spec, &folds, 5).unwrap();
        for p in &phi {
            assert!((p.phi_tau_upper - p.phi_tau_lower).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_crossfit_mean_matches_truth() {
        // oracle nuisances injected instead of fitted: mean phi+ within
        // 3 MC standard errors of mean tau+
        let n = 10_000;
        let ds = dgp::sample_synthetic(n, 6);
        let s = make_sensitivity(E).unwrap();
        let phi = oracle_pseudo(&ds, &s, &SyntheticOracle);
        for side in [BoundSide::Upper, BoundSide::Lower] {
            let diffs: Vec<f64> = (0..n)
                .map(|i| {
                    let p = match side {
                        BoundSide::Upper => phi[i].phi_tau_upper,
                        BoundSide::Lower => phi[i].phi_tau_lower,
                    };
                    p - SyntheticOracle.true_bound(ds.x.row(i), &s, side)
                })
                .collect();
            let mean = diffs.iter().sum::<f64>() / n as f64;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            assert!(
                mean.abs() <= 3.0 * se,
                "{side:?}: mean residual {mean} vs 3se {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn blearner_lambda_one_sides_identical() {
        let ds = dgp::sample_synthetic(300, 7);
        let s = make_sensitivity(1.0).unwrap();
        let bf = fit_blearner(&ds, &s, &kernel_config(1)).unwrap();
        let mut x = Array1::zeros(dgp::SYNTHETIC_DIM);
        for k in 0..20 {
            x[0] = -2.0 + 4.0 * k as f64 / 19.0;
            let p = bf.predict(x.view());
            assert_eq!(p.lower, p.upper);
        }
    }

    #[test]
    fn blearner_is_deterministic() {
        let ds = dgp::sample_synthetic(200, 8);
        let s = make_sensitivity(E).unwrap();
        let mut cfg = kernel_config(9);
        cfg.nuisance.smoother = SmootherSpec::forest_default();
        cfg.second_stage = SecondStageSpec::Erm(SmootherSpec::forest_default());
        let a = fit_blearner(&ds, &s, &cfg).unwrap();
        let b = fit_blearner(&ds, &s, &cfg).unwrap();
        let mut x = Array1::zeros(dgp::SYNTHETIC_DIM);
        for k in 0..25 {
            x[0] = -2.0 + 4.0 * k as f64 / 24.0;
            let (pa, pb) = (a.predict(x.view()), b.predict(x.view()));
            assert_eq!(pa.lower, pb.lower);
            assert_eq!(pa.upper, pb.upper);
        }
    }

    #[test]
    fn second_stage_constants_reproduced() {
        let ds = dgp::sample_synthetic(100, 10);
        let phi = vec![1.7; 100];
        let m = second_stage_erm(ds.x.view(), &phi, &SmootherSpec::kernel_default(), 0).unwrap();
        let q = Array1::zeros(dgp::SYNTHETIC_DIM);
        assert!((m.predict(q.view()) - 1.7).abs() < 1e-9);
        // residual mean over the training sample is exactly zero here
        let resid_mean: f64 = (0..100)
            .map(|i| phi[i] - m.predict(ds.x.row(i)))
            .sum::<f64>()
            / 100.0;
        assert!(resid_mean.abs() < 1e-9);

        let half = second_stage_smoother(
            ds.x.view(),
            &phi,
            ds.x.view(),
            &phi,
            &SmootherSpec::forest_default(),
            0,
        )
        .unwrap();
        assert!((half.predict(q.view()) - 1.7).abs() < 1e-9);
    }

    #[test]
    fn second_stage_erm_recovers_linear_target() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let x = ndarray::Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
        let phi: Vec<f64> = (0..n).map(|i| 1.2 * x[[i, 0]] - 0.4).collect();
        let m = second_stage_erm(x.view(), &phi, &SmootherSpec::kernel_default(), 0).unwrap();
        let mut max_err: f64 = 0.0;
        for k in 0..21 {
            let x0 = -1.5 + 3.0 * k as f64 / 20.0;
            let q = ndarray::array![x0, 0.0];
            max_err = max_err.max((m.predict(q.view()) - (1.2 * x0 - 0.4)).abs());
        }
        assert!(max_err <= 0.1, "max interior error {max_err}");
    }

    #[test]
    fn half_smoother_on_identical_halves_equals_kernel_erm() {
        let ds = dgp::sample_synthetic(400, 12);
        let phi: Vec<f64> = (0..ds.n()).map(|i| (ds.x[[i, 0]] * 1.3).sin()).collect();
        let erm = second_stage_erm(ds.x.view(), &phi, &SmootherSpec::kernel_default(), 0).unwrap();
        let half = second_stage_smoother(
            ds.x.view(),
            &phi,
            ds.x.view(),
            &phi,
            &SmootherSpec::kernel_default(),
            0,
        )
        .unwrap();
        let mut x = Array1::zeros(dgp::SYNTHETIC_DIM);
        for k in 0..30 {
            x[0] = -2.0 + 4.0 * k as f64 / 29.0;
            assert!((erm.predict(x.view()) - half.predict(x.view())).abs() < 1e-9);
        }
    }

    #[test]
    fn half_smoother_rejects_tiny_halves() {
        let ds = dgp::sample_synthetic(12, 13);
        let phi = vec![0.0; 12];
        let res = second_stage_smoother(
            ds.x.slice(ndarray::s![..6, ..]),
            &phi[..6],
            ds.x.slice(ndarray::s![6.., ..]),
            &phi[6..],
            &SmootherSpec::kernel_default(),
            0,
        );
        assert!(matches!(res, Err(EstimatorError::HalvesTooSmall { got: 6 })));
    }

    #[test]
    fn plugin_lambda_one_is_mu_difference() {
        let ds = dgp::sample_synthetic(500, 14);
        let s = make_sensitivity(1.0).unwrap();
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::Composed,
        };
        let plugin = fit_plugin(&ds, &s, &spec, 0).unwrap();
        // independent mu fits on each arm with the same smoother
        let rows1 = ds.arm_indices(1);
        let rows0 = ds.arm_indices(0);
        let d1 = ds.subset(&rows1);
        let d0 = ds.subset(&rows0);
        let mu1 = fit_quantile_cvar(&d1, 1, &SmootherSpec::kernel_default(), &s, 0).unwrap();
        let mu0 = fit_quantile_cvar(&d0, 0, &SmootherSpec::kernel_default(), &s, 0).unwrap();
        let mut x = Array1::zeros(dgp::SYNTHETIC_DIM);
        for k in 0..10 {
            x[0] = -1.8 + 3.6 * k as f64 / 9.0;
            let p = plugin.predict(x.view());
            let want = mu1.predict_mu(x.view()) - mu0.predict_mu(x.view());
            assert!((p.upper - want).abs() < 1e-9);
            assert!((p.lower - want).abs() < 1e-9);
        }
    }

    #[test]
    fn plugin_bounds_ordered_with_shared_weights() {
        let ds = dgp::sample_synthetic(600, 15);
        for lambda in [1.0, 1.7, E, 4.0] {
            let s = make_sensitivity(lambda).unwrap();
            let spec = NuisanceSpec {
                propensity: PropensitySpec::Kernel(KernelSpec::default()),
                smoother: SmootherSpec::kernel_default(),
                clip_eps: 0.01,
                rho_route: RhoRoute::Composed,
            };
            let plugin = fit_plugin(&ds, &s, &spec, 0).unwrap();
            let mut x = Array1::zeros(dgp::SYNTHETIC_DIM);
            for k in 0..40 {
                x[0] = -2.0 + 4.0 * k as f64 / 39.0;
                let p = plugin.predict(x.view());
                assert!(
                    p.upper >= p.lower - 1e-9,
                    "plugin ordering violated at lambda {lambda}"
                );
            }
        }
    }

    #[test]
    fn oracle_lambda_monotone_in_lambda() {
        // closed-form bounds nest as Lambda grows
        let lambdas = [1.0, 1.5, E, 5.0];
        let mut x = Array1::zeros(dgp::SYNTHETIC_DIM);
        for k in 0..100 {
            x[0] = -2.0 + 4.0 * k as f64 / 99.0;
            let mut prev_up = f64::NEG_INFINITY;
            let mut prev_lo = f64::INFINITY;
            for lambda in lambdas {
                let s = make_sensitivity(lambda).unwrap();
                let up = SyntheticOracle.true_bound(x.view(), &s, BoundSide::Upper);
                let lo = SyntheticOracle.true_bound(x.view(), &s, BoundSide::Lower);
                assert!(up >= prev_up - 1e-10, "upper not monotone at x0 {}", x[0]);
                assert!(lo <= prev_lo + 1e-10, "lower not monotone at x0 {}", x[0]);
                assert!(up - lo >= -1e-10);
                prev_up = up;
                prev_lo = lo;
            }
        }
    }

    // simple design for the direct-route checks: Y = x0 + N(0,1) on both
    // arms, A a fair coin, so rho±(x, a) = x0 ± (1−Λ⁻¹)(Λ+1)φ(z_α)
    fn linear_gaussian_dataset(n: usize, seed: u64) -> Dataset {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = ndarray::Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            a.push(u8::from(rng.random::<f64>() < 0.5));
            let z: f64 = rng.sample(StandardNormal);
            y.push(x[[i, 0]] + z);
        }
        Dataset::new(x, a, y)
    }

    #[test]
    fn direct_r_route_mechanics() {
        // constant outcomes: every direct-route nuisance equals the constant
        let x = ndarray::Array2::from_shape_fn((60, 2), |(i, j)| (i * 2 + j) as f64 * 0.1);
        let mut a = vec![0u8; 60];
        for (i, ai) in a.iter_mut().enumerate() {
            *ai = u8::from(i % 2 == 0);
        }
        let ds = Dataset::new(x, a, vec![3.25; 60]);
        let s = make_sensitivity(2.5).unwrap();
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::DirectR,
        };
        let arm = fit_arm_nuisance(&ds, 1, &spec, &s, 0).unwrap();
        let eval = arm.eval(ndarray::array![1.0, 2.0].view(), &s);
        for v in [eval.mu, eval.q_plus, eval.q_minus, eval.rho_plus, eval.rho_minus] {
            assert!((v - 3.25).abs() < 1e-9);
        }

        // Lambda = 1: R± = y on both sides, so the two rho regressions see
        // identical targets and the (deterministic) kernel fits coincide
        let ds = linear_gaussian_dataset(800, 17);
        let s1 = make_sensitivity(1.0).unwrap();
        let arm = fit_arm_nuisance(&ds, 1, &spec, &s1, 0).unwrap();
        for x0 in [-1.0, 0.0, 1.0] {
            let eval = arm.eval(ndarray::array![x0, 0.0].view(), &s1);
            assert_eq!(eval.rho_plus, eval.rho_minus);
        }
    }

    #[test]
    fn direct_r_route_tracks_oracle_on_linear_design() {
        let ds = linear_gaussian_dataset(6000, 18);
        let s = make_sensitivity(E).unwrap();
        let folds = assign_folds(ds.n(), 2, FoldScheme::Modular, 0).unwrap();
        let direct_spec = NuisanceSpec {
            propensity: PropensitySpec::Kernel(KernelSpec::default()),
            smoother: SmootherSpec::kernel_default(),
            clip_eps: 0.01,
            rho_route: RhoRoute::DirectR,
        };
        let (phi, direct) = crossfit_pseudo(&ds, &s, &direct_spec, &folds, 1).unwrap();
        assert!(phi.iter().all(|p| p.phi_tau_upper.is_finite()));
        let spread =
            (1.0 - s.inv_lambda()) * s.tail_factor() * crate::dgp::normal::pdf(0.616_017_692_7);
        for k in 0..9 {
            let x0 = -1.0 + 2.0 * k as f64 / 8.0;
            let got = direct.eval(0, ndarray::array![x0, 0.0].view());
            assert!(
                (got.rho_plus_1 - (x0 + spread)).abs() < 0.35,
                "rho+(x,1) at {x0}: {} vs {}",
                got.rho_plus_1,
                x0 + spread
            );
            assert!(
                (got.rho_minus_0 - (x0 - spread)).abs() < 0.35,
                "rho-(x,0) at {x0}: {} vs {}",
                got.rho_minus_0,
                x0 - spread
            );
        }
    }
}
