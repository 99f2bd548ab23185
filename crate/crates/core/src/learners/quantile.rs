//! Weighted empirical quantiles and conditional value at risk.

use ndarray::ArrayView1;

use super::{LearnerError, WeightSmoother};
use crate::domain::{BoundSide, SensitivityParams};

const WEIGHT_SUM_TOL: f64 = 1e-6;

fn check_weights(values: &[f64], weights: &[f64]) -> Result<(), LearnerError> {
    if values.is_empty() || weights.len() != values.len() {
        return Err(LearnerError::EmptyInput);
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(LearnerError::BadWeights { sum });
    }
    Ok(())
}

/// Left-continuous weighted quantile: the smallest support value whose
/// cumulative weight reaches `c`. Ties on equal values are merged before
/// accumulation.
pub fn weighted_quantile(values: &[f64], weights: &[f64], c: f64) -> Result<f64, LearnerError> {
    check_weights(values, weights)?;
    debug_assert!(c > 0.0 && c < 1.0, "quantile level must be in (0,1)");
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
    Ok(quantile_scan(values, weights, &order, c))
}

// Shared scan over a precomputed sort order. Runs of equal values contribute
// their total weight before the threshold comparison.
pub(crate) fn quantile_scan(values: &[f64], weights: &[f64], order: &[u32], c: f64) -> f64 {
    let mut cum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let v = values[order[i] as usize];
        let mut group = 0.0;
        while i < order.len() && values[order[i] as usize] == v {
            group += weights[order[i] as usize];
            i += 1;
        }
        cum += group;
        if cum >= c {
            return v;
        }
    }
    // cumulative weight fell short of c by float error; the top value is the inf
    values[order[order.len() - 1] as usize]
}

/// `q + (Λ+1)·Σᵢ wᵢ·{vᵢ − q}±` — the weighted-empirical CVaR pseudo-mean at
/// a putative quantile `q`.
pub fn weighted_cvar(
    values: &[f64],
    weights: &[f64],
    q: f64,
    side: BoundSide,
    s: &SensitivityParams,
) -> Result<f64, LearnerError> {
    check_weights(values, weights)?;
    let tail: f64 = values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * side.hinge(v - q))
        .sum();
    Ok(q + s.tail_factor() * tail)
}

/// Per-arm conditional summaries at one query point, all from one weight
/// vector.
#[derive(Debug, Clone, Copy)]
pub struct ArmEval {
    pub mu: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub cvar_plus: f64,
    pub cvar_minus: f64,
}

/// Conditional quantile / CVaR / mean model for one treatment arm.
///
/// Holds the arm-restricted outcomes, a smoother fitted on the arm's
/// covariates, and the sort order of the outcomes so that quantile queries
/// are a single scan.
pub struct QuantileCvarModel {
    smoother: Box<dyn WeightSmoother>,
    y: Vec<f64>,
    order: Vec<u32>,
    s: SensitivityParams,
    arm: u8,
}

impl QuantileCvarModel {
    pub(crate) fn new(
        smoother: Box<dyn WeightSmoother>,
        y: Vec<f64>,
        s: SensitivityParams,
        arm: u8,
    ) -> Self {
        let mut order: Vec<u32> = (0..y.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| y[a as usize].total_cmp(&y[b as usize]));
        Self {
            smoother,
            y,
            order,
            s,
            arm,
        }
    }

    pub fn arm(&self) -> u8 {
        self.arm
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    /// All five summaries from one weights call.
    pub fn eval(&self, x: ArrayView1<f64>) -> ArmEval {
        let w = self.smoother.weights(x);
        self.eval_with_weights(&w)
    }

    fn eval_with_weights(&self, w: &[f64]) -> ArmEval {
        let mu: f64 = w.iter().zip(&self.y).map(|(wi, yi)| wi * yi).sum();
        let q_plus = quantile_scan(&self.y, w, &self.order, self.s.alpha());
        let q_minus = quantile_scan(&self.y, w, &self.order, 1.0 - self.s.alpha());
        let up: f64 = self
            .y
            .iter()
            .zip(w)
            .map(|(&v, &wi)| wi * (v - q_plus).max(0.0))
            .sum();
        let lo: f64 = self
            .y
            .iter()
            .zip(w)
            .map(|(&v, &wi)| wi * (v - q_minus).min(0.0))
            .sum();
        ArmEval {
            mu,
            q_plus,
            q_minus,
            cvar_plus: q_plus + self.s.tail_factor() * up,
            cvar_minus: q_minus + self.s.tail_factor() * lo,
        }
    }

    pub fn predict_q(&self, x: ArrayView1<f64>, side: BoundSide) -> f64 {
        let eval = self.eval(x);
        match side {
            BoundSide::Upper => eval.q_plus,
            BoundSide::Lower => eval.q_minus,
        }
    }

    pub fn predict_cvar(&self, x: ArrayView1<f64>, side: BoundSide) -> f64 {
        let eval = self.eval(x);
        match side {
            BoundSide::Upper => eval.cvar_plus,
            BoundSide::Lower => eval.cvar_minus,
        }
    }

    pub fn predict_mu(&self, x: ArrayView1<f64>) -> f64 {
        let w = self.smoother.weights(x);
        w.iter().zip(&self.y).map(|(wi, yi)| wi * yi).sum()
    }
}
