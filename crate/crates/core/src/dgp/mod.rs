//! Synthetic data generation with closed-form oracle nuisances.
//!
//! The base design draws X uniformly on [−2, 2]⁵, assigns treatment with
//! propensity σ(0.75·x₀ + 0.5), and draws potential outcomes as unit-variance
//! Gaussians around `m(x, a) = (2a−1)(x₀+1) − 2·sin((4a−2)·x₀)`. Because the
//! conditional outcome law is Gaussian, every nuisance (quantiles, CVaR, ρ±)
//! and the sharp bounds themselves have closed forms, which serve as oracles
//! throughout the test suites.
//!
//! A hidden-confounder variant plants a binary U that pushes the full
//! propensity to the odds-ratio boundary Λ*, for deferral and Λ-sweep
//! experiments on data that genuinely violate unconfoundedness.

pub mod normal;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domain::{BoundSide, Dataset, SensitivityParams};
use crate::pseudo::NuisanceEval;

/// σ(t) = 1/(1+e^{−t}).
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Conditional mean outcome `m(x, a)` of the synthetic design.
#[inline]
pub fn mean_outcome(x0: f64, a: u8) -> f64 {
    let af = a as f64;
    (2.0 * af - 1.0) * (x0 + 1.0) - 2.0 * ((4.0 * af - 2.0) * x0).sin()
}

/// Nominal (observed) propensity e(x) of the synthetic design.
#[inline]
pub fn nominal_propensity(x0: f64) -> f64 {
    sigmoid(0.75 * x0 + 0.5)
}

pub const SYNTHETIC_DIM: usize = 5;

// Per-purpose RNG streams so that the first n rows of a draw are a prefix
// of any longer draw with the same seed (lets the convergence study nest
// sample sizes for variance reduction).
const STREAM_X: u64 = 0;
const STREAM_A: u64 = 1;
const STREAM_NOISE0: u64 = 2;
const STREAM_NOISE1: u64 = 3;
const STREAM_U: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws `n` samples from the unconfounded synthetic design. Y0/Y1 are kept
/// as ground-truth columns and Y = Y(A).
pub fn sample_synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng_x = stream(seed, STREAM_X);
    let mut rng_a = stream(seed, STREAM_A);
    let mut rng_n0 = stream(seed, STREAM_NOISE0);
    let mut rng_n1 = stream(seed, STREAM_NOISE1);

    let mut x = Array2::zeros((n, SYNTHETIC_DIM));
    let mut a = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..SYNTHETIC_DIM {
            x[[i, j]] = -2.0 + 4.0 * rng_x.random::<f64>();
        }
        let x0 = x[[i, 0]];
        let ai = u8::from(rng_a.random::<f64>() < nominal_propensity(x0));
        let z0: f64 = rng_n0.sample(StandardNormal);
        let z1: f64 = rng_n1.sample(StandardNormal);
        let (v0, v1) = (mean_outcome(x0, 0) + z0, mean_outcome(x0, 1) + z1);
        y.push(if ai == 1 { v1 } else { v0 });
        a.push(ai);
        y0.push(v0);
        y1.push(v1);
    }
    Dataset::new(x, a, y).with_potential_outcomes(y0, y1)
}

/// Closed-form nuisances of one arm at one covariate point.
#[derive(Debug, Clone, Copy)]
pub struct OracleArm {
    pub e: f64,
    pub mu: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub cvar_plus: f64,
    pub cvar_minus: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

/// Exact nuisance functions and sharp bounds of the synthetic design.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticOracle;

impl SyntheticOracle {
    pub fn propensity(&self, x: ArrayView1<f64>) -> f64 {
        nominal_propensity(x[0])
    }

    pub fn mean(&self, x: ArrayView1<f64>, a: u8) -> f64 {
        mean_outcome(x[0], a)
    }

    /// (e, μ, q±, CVaR±, ρ±) at `(x, a)` for sensitivity level `s`.
    ///
    /// For the unit-variance Gaussian outcome: q₊ = μ + Φ⁻¹(α),
    /// q₋ = μ − Φ⁻¹(α), CVaR± = μ ± φ(Φ⁻¹(α))/(1−α).
    pub fn arm_nuisance(&self, x: ArrayView1<f64>, a: u8, s: &SensitivityParams) -> OracleArm {
        let e = self.propensity(x);
        let mu = self.mean(x, a);
        let z_alpha = normal::inv_cdf(s.alpha()).expect("alpha in (0,1)");
        let tail = normal::pdf(z_alpha) * s.tail_factor();
        let (q_plus, q_minus) = (mu + z_alpha, mu - z_alpha);
        let (cvar_plus, cvar_minus) = (mu + tail, mu - tail);
        OracleArm {
            e,
            mu,
            q_plus,
            q_minus,
            cvar_plus,
            cvar_minus,
            rho_plus: crate::pseudo::rho_compose(mu, cvar_plus, s),
            rho_minus: crate::pseudo::rho_compose(mu, cvar_minus, s),
        }
    }

    /// ρ*±(x, a, q̄): the modified outcome regression evaluated at an
    /// arbitrary putative quantile, via the Gaussian partial expectation.
    pub fn rho_at(
        &self,
        x: ArrayView1<f64>,
        a: u8,
        side: BoundSide,
        q_bar: f64,
        s: &SensitivityParams,
    ) -> f64 {
        let mu = self.mean(x, a);
        let partial = match side {
            BoundSide::Upper => normal::partial_expectation_above(mu, q_bar),
            BoundSide::Lower => normal::partial_expectation_below(mu, q_bar),
        };
        let h_mean = q_bar + s.tail_factor() * partial;
        s.inv_lambda() * mu + (1.0 - s.inv_lambda()) * h_mean
    }

    /// Sharp CATE bound τ±(x) from the closed-form nuisances.
    pub fn true_bound(&self, x: ArrayView1<f64>, s: &SensitivityParams, side: BoundSide) -> f64 {
        let arm1 = self.arm_nuisance(x, 1, s);
        let arm0 = self.arm_nuisance(x, 0, s);
        let e = arm1.e;
        match side {
            BoundSide::Upper => {
                e * arm1.mu + (1.0 - e) * arm1.rho_plus
                    - ((1.0 - e) * arm0.mu + e * arm0.rho_minus)
            }
            BoundSide::Lower => {
                e * arm1.mu + (1.0 - e) * arm1.rho_minus
                    - ((1.0 - e) * arm0.mu + e * arm0.rho_plus)
            }
        }
    }

    /// Full nuisance evaluation in the shape the pseudo-outcome formulas take.
    pub fn nuisance_eval(&self, x: ArrayView1<f64>, s: &SensitivityParams) -> NuisanceEval {
        let a1 = self.arm_nuisance(x, 1, s);
        let a0 = self.arm_nuisance(x, 0, s);
        NuisanceEval {
            e: a1.e,
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

/// Configuration of the hidden-confounder generator.
#[derive(Debug, Clone, Copy)]
pub struct ConfoundedConfig {
    /// True odds-ratio level Λ* ≥ 1 attained by the full propensity.
    pub lambda_star: f64,
    /// Outcome shift per unit of (2U−1), identical across arms.
    pub confounder_effect: f64,
    /// Constant added to the treated-arm mean (shifts every CATE upward).
    pub cate_shift: f64,
}

impl Default for ConfoundedConfig {
    fn default() -> Self {
        Self {
            lambda_star: std::f64::consts::E,
            confounder_effect: 1.0,
            cate_shift: 0.0,
        }
    }
}

/// A confounded draw; U and the full propensity ride along for evaluation
/// only and are never visible to estimators.
#[derive(Debug, Clone)]
pub struct ConfoundedSample {
    pub dataset: Dataset,
    pub u: Vec<u8>,
    pub full_propensity: Vec<f64>,
}

/// Full propensity e(x, u) with odds(e(x,u)) = odds(e(x))·Λ*^(2u−1).
#[inline]
pub fn full_propensity(x0: f64, u: u8, lambda_star: f64) -> f64 {
    let e = nominal_propensity(x0);
    let factor = if u == 1 { lambda_star } else { 1.0 / lambda_star };
    let odds = e / (1.0 - e) * factor;
    odds / (1.0 + odds)
}

/// Draws `n` samples with a binary hidden confounder sitting exactly on the
/// marginal-sensitivity-model boundary at Λ*.
///
/// U ~ Bern(1/2); A | X, U ~ Bern(e(x, u)); Y(a) = m(x, a) + a·cate_shift +
/// confounder_effect·(2U−1) + N(0, 1).
pub fn sample_confounded(n: usize, seed: u64, cfg: &ConfoundedConfig) -> ConfoundedSample {
    assert!(
        cfg.lambda_star >= 1.0 && cfg.lambda_star.is_finite(),
        "lambda_star must be >= 1"
    );
    let mut rng_x = stream(seed, STREAM_X);
    let mut rng_a = stream(seed, STREAM_A);
    let mut rng_n0 = stream(seed, STREAM_NOISE0);
    let mut rng_n1 = stream(seed, STREAM_NOISE1);
    let mut rng_u = stream(seed, STREAM_U);

    let mut x = Array2::zeros((n, SYNTHETIC_DIM));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut e_full = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..SYNTHETIC_DIM {
            x[[i, j]] = -2.0 + 4.0 * rng_x.random::<f64>();
        }
        let x0 = x[[i, 0]];
        let ui = u8::from(rng_u.random::<f64>() < 0.5);
        let e = full_propensity(x0, ui, cfg.lambda_star);
        let ai = u8::from(rng_a.random::<f64>() < e);
        let shift = cfg.confounder_effect * (2.0 * ui as f64 - 1.0);
        let z0: f64 = rng_n0.sample(StandardNormal);
        let z1: f64 = rng_n1.sample(StandardNormal);
        let v0 = mean_outcome(x0, 0) + shift + z0;
        let v1 = mean_outcome(x0, 1) + cfg.cate_shift + shift + z1;
        y.push(if ai == 1 { v1 } else { v0 });
        a.push(ai);
        u.push(ui);
        e_full.push(e);
        y0.push(v0);
        y1.push(v1);
    }
    ConfoundedSample {
        dataset: Dataset::new(x, a, y).with_potential_outcomes(y0, y1),
        u,
        full_propensity: e_full,
    }
}
