//! Pseudo-outcome formulas, pure and stateless.
//!
//! `H±` turns an outcome and a putative quantile into the CVaR
//! pseudo-outcome, `R±` mixes it with the raw outcome at weight Λ⁻¹, and the
//! `φ` family assembles the Neyman-orthogonal per-sample quantities whose
//! conditional means are the sharp CATE bounds. Everything here operates on
//! one sample at a time; batching and parallelism live with the callers.

use crate::domain::{BoundSide, SensitivityParams};

/// All first-stage nuisances evaluated at a single covariate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceEval {
    pub e: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub q_plus_1: f64,
    pub q_minus_1: f64,
    pub q_plus_0: f64,
    pub q_minus_0: f64,
    pub rho_plus_1: f64,
    pub rho_minus_1: f64,
    pub rho_plus_0: f64,
    pub rho_minus_0: f64,
}

/// The six per-sample pseudo-outcomes. The τ values satisfy
/// `phi_tau_upper = phi_1_upper − phi_0_lower` and
/// `phi_tau_lower = phi_1_lower − phi_0_upper` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoOutcomes {
    pub phi_tau_upper: f64,
    pub phi_tau_lower: f64,
    pub phi_1_upper: f64,
    pub phi_1_lower: f64,
    pub phi_0_upper: f64,
    pub phi_0_lower: f64,
}

/// `H±(z, q̄) = q̄ + (Λ+1)·{y − q̄}±`.
#[inline]
pub fn h_value(y: f64, q: f64, side: BoundSide, s: &SensitivityParams) -> f64 {
    q + s.tail_factor() * side.hinge(y - q)
}

/// `R±(z, q̄) = Λ⁻¹·y + (1 − Λ⁻¹)·H±(z, q̄)`.
#[inline]
pub fn r_value(y: f64, q: f64, side: BoundSide, s: &SensitivityParams) -> f64 {
    s.inv_lambda() * y + (1.0 - s.inv_lambda()) * h_value(y, q, side, s)
}

/// `ρ± = Λ⁻¹·μ + (1 − Λ⁻¹)·CVaR±`.
#[inline]
pub fn rho_compose(mu: f64, cvar: f64, s: &SensitivityParams) -> f64 {
    s.inv_lambda() * mu + (1.0 - s.inv_lambda()) * cvar
}

/// Assembles all six pseudo-outcomes for one sample.
///
/// Panics if the propensity sits outside (0, 1): clipping happens upstream,
/// so a violation here is a caller bug, not a data condition.
pub fn phi_sample(
    nuis: &NuisanceEval,
    a: u8,
    y: f64,
    s: &SensitivityParams,
) -> PseudoOutcomes {
    assert!(
        nuis.e > 0.0 && nuis.e < 1.0,
        "propensity {} escaped clipping",
        nuis.e
    );
    let af = a as f64;
    let e = nuis.e;
    // Correction weights: (1−ê)A/ê targets the treated arm, ê(1−A)/(1−ê)
    // the control arm; each vanishes on the opposite arm.
    let w1 = (1.0 - e) * af / e;
    let w0 = e * (1.0 - af) / (1.0 - e);

    let phi_arm1 = |side: BoundSide, q: f64, rho: f64| {
        af * y + (1.0 - af) * rho + w1 * (r_value(y, q, side, s) - rho)
    };
    let phi_arm0 = |side: BoundSide, q: f64, rho: f64| {
        (1.0 - af) * y + af * rho + w0 * (r_value(y, q, side, s) - rho)
    };

    let phi_1_upper = phi_arm1(BoundSide::Upper, nuis.q_plus_1, nuis.rho_plus_1);
    let phi_1_lower = phi_arm1(BoundSide::Lower, nuis.q_minus_1, nuis.rho_minus_1);
    let phi_0_upper = phi_arm0(BoundSide::Upper, nuis.q_plus_0, nuis.rho_plus_0);
    let phi_0_lower = phi_arm0(BoundSide::Lower, nuis.q_minus_0, nuis.rho_minus_0);

    PseudoOutcomes {
        phi_tau_upper: phi_1_upper - phi_0_lower,
        phi_tau_lower: phi_1_lower - phi_0_upper,
        phi_1_upper,
        phi_1_lower,
        phi_0_upper,
        phi_0_lower,
    }
}

/// The doubly-robust CATE pseudo-outcome,
/// `μ̂(x,1) − μ̂(x,0) + (A − ê)/(ê(1−ê))·(Y − μ̂(x,A))`.
///
/// Exists as the Λ=1 oracle: `phi_sample` must collapse to this exactly.
pub fn dr_pseudo(e: f64, mu1: f64, mu0: f64, a: u8, y: f64) -> f64 {
    debug_assert!(e > 0.0 && e < 1.0);
    let af = a as f64;
    let mu_a = if a == 1 { mu1 } else { mu0 };
    mu1 - mu0 + (af - e) / (e * (1.0 - e)) * (y - mu_a)
}
