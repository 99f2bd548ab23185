//! Core data types shared by every stage of the estimator: observational
//! datasets, sensitivity-model arithmetic, bound-side dispatch, and
//! cross-fitting fold assignment.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("sensitivity level must be finite and >= 1, got {0}")]
    InvalidLambda(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {field} at row {row}")]
    NonFinite { field: &'static str, row: usize },
    #[error("treatment must be 0 or 1, found {value} at row {row}")]
    NonBinaryTreatment { value: f64, row: usize },
    #[error("only one treatment arm present (all A = {arm})")]
    SingleArm { arm: u8 },
    #[error("Y does not equal Y({arm}) at row {row}: observed {observed}, potential {potential}")]
    ConsistencyViolation {
        row: usize,
        arm: u8,
        observed: f64,
        potential: f64,
    },
    #[error("fold count K = {k} invalid for n = {n} (need 2 <= K <= n)")]
    InvalidFolds { n: usize, k: usize },
}

/// Upper (+) or lower (−) bound. Every side-dependent formula dispatches
/// on this instead of carrying sign conventions around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundSide {
    Upper,
    Lower,
}

impl BoundSide {
    /// One-sided hinge `{b}₊ = max(b, 0)` for Upper, `{b}₋ = min(b, 0)` for Lower.
    #[inline]
    pub fn hinge(self, b: f64) -> f64 {
        match self {
            BoundSide::Upper => b.max(0.0),
            BoundSide::Lower => b.min(0.0),
        }
    }

    pub fn flip(self) -> Self {
        match self {
            BoundSide::Upper => BoundSide::Lower,
            BoundSide::Lower => BoundSide::Upper,
        }
    }
}

/// Sensitivity level Λ of the marginal sensitivity model together with the
/// derived quantities used everywhere downstream.
///
/// `alpha = Λ/(Λ+1)` is the quantile level driving the CVaR terms and
/// `tail_factor = Λ+1` equals `1/(1−alpha)`. Both are derived from Λ at
/// construction and never stored independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityParams {
    lambda: f64,
    alpha: f64,
    tail_factor: f64,
    inv_lambda: f64,
}

impl SensitivityParams {
    pub fn new(lambda: f64) -> Result<Self, DomainError> {
        if !lambda.is_finite() || lambda < 1.0 {
            return Err(DomainError::InvalidLambda(lambda));
        }
        Ok(Self {
            lambda,
            alpha: lambda / (lambda + 1.0),
            tail_factor: lambda + 1.0,
            inv_lambda: 1.0 / lambda,
        })
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Quantile level α = Λ/(Λ+1) ∈ [0.5, 1).
    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// 1/(1−α) = Λ+1.
    #[inline]
    pub fn tail_factor(&self) -> f64 {
        self.tail_factor
    }

    #[inline]
    pub fn inv_lambda(&self) -> f64 {
        self.inv_lambda
    }

    /// Quantile level for the given side: α for Upper, 1−α for Lower.
    #[inline]
    pub fn quantile_level(&self, side: BoundSide) -> f64 {
        match side {
            BoundSide::Upper => self.alpha,
            BoundSide::Lower => 1.0 - self.alpha,
        }
    }
}

/// Validates Λ and derives the dependent quantities.
pub fn make_sensitivity(lambda: f64) -> Result<SensitivityParams, DomainError> {
    SensitivityParams::new(lambda)
}

/// A lower/upper bound pair at one covariate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Interval contains zero (inclusive).
    pub fn straddles_zero(&self) -> bool {
        self.lower <= 0.0 && self.upper >= 0.0
    }
}

/// Observational sample: covariates X (n×d), binary treatment A, outcome Y,
/// and optionally the simulated potential outcomes Y(0), Y(1) for evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, a: Vec<u8>, y: Vec<f64>) -> Self {
        Self {
            x,
            a,
            y,
            y0: None,
            y1: None,
        }
    }

    pub fn with_potential_outcomes(mut self, y0: Vec<f64>, y1: Vec<f64>) -> Self {
        self.y0 = Some(y0);
        self.y1 = Some(y1);
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Row indices with A = arm.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.a
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == arm)
            .map(|(i, _)| i)
            .collect()
    }

    /// Keep only the given rows, preserving their order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let d = self.dim();
        let mut x = Array2::zeros((rows.len(), d));
        for (r, &i) in rows.iter().enumerate() {
            x.row_mut(r).assign(&self.x.row(i));
        }
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Dataset {
            x,
            a: rows.iter().map(|&i| self.a[i]).collect(),
            y: pick(&self.y),
            y0: self.y0.as_ref().map(pick),
            y1: self.y1.as_ref().map(pick),
        }
    }
}

/// Checks all Dataset invariants: finite entries, matching lengths, binary
/// treatment, causal consistency of Y with (Y0, Y1) when present, and
/// (optionally) presence of both arms.
pub fn validate_dataset(ds: &Dataset, require_both_arms: bool) -> Result<(), DomainError> {
    let n = ds.n();
    if n == 0 || ds.dim() == 0 {
        return Err(DomainError::EmptyDataset);
    }
    if ds.a.len() != n || ds.y.len() != n {
        return Err(DomainError::ShapeMismatch(format!(
            "X has {} rows but |A| = {}, |Y| = {}",
            n,
            ds.a.len(),
            ds.y.len()
        )));
    }
    for (pos, v) in ds.x.iter().enumerate() {
        if !v.is_finite() {
            return Err(DomainError::NonFinite {
                field: "X",
                row: pos / ds.dim(),
            });
        }
    }
    for (i, &a) in ds.a.iter().enumerate() {
        if a > 1 {
            return Err(DomainError::NonBinaryTreatment {
                value: a as f64,
                row: i,
            });
        }
    }
    for (i, &y) in ds.y.iter().enumerate() {
        if !y.is_finite() {
            return Err(DomainError::NonFinite { field: "Y", row: i });
        }
    }
    for (field, col) in [("Y0", &ds.y0), ("Y1", &ds.y1)] {
        if let Some(col) = col {
            if col.len() != n {
                return Err(DomainError::ShapeMismatch(format!(
                    "|{}| = {} but n = {}",
                    field,
                    col.len(),
                    n
                )));
            }
            for (i, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DomainError::NonFinite { field: "Y0/Y1", row: i });
                }
            }
        }
    }
    // Causal consistency: Y = Y(A) whenever the potential outcome is carried.
    if let (Some(y0), Some(y1)) = (&ds.y0, &ds.y1) {
        for i in 0..n {
            let potential = if ds.a[i] == 1 { y1[i] } else { y0[i] };
            if ds.y[i] != potential {
                return Err(DomainError::ConsistencyViolation {
                    row: i,
                    arm: ds.a[i],
                    observed: ds.y[i],
                    potential,
                });
            }
        }
    }
    if require_both_arms {
        let treated = ds.a.iter().filter(|&&a| a == 1).count();
        if treated == 0 {
            return Err(DomainError::SingleArm { arm: 0 });
        }
        if treated == n {
            return Err(DomainError::SingleArm { arm: 1 });
        }
    }
    Ok(())
}

/// How sample indices are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldScheme {
    /// `fold_of[i] = i mod K`.
    Modular,
    /// Seeded permutation of indices followed by modular assignment.
    Shuffled,
}

/// Partition of `n` sample indices into `K` folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// Indices held out in fold `k`.
    pub fn held_out(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Indices available for training fold `k`'s models.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != k).collect()
    }
}

/// Deterministic fold assignment. The modular scheme maps index `i` to fold
/// `i mod K`; the shuffled scheme applies the same rule to a seeded
/// permutation of the indices.
pub fn assign_folds(
    n: usize,
    k: usize,
    scheme: FoldScheme,
    seed: u64,
) -> Result<FoldAssignment, DomainError> {
    if k < 2 || k > n {
        return Err(DomainError::InvalidFolds { n, k });
    }
    let mut fold_of = vec![0usize; n];
    match scheme {
        FoldScheme::Modular => {
            for (i, f) in fold_of.iter_mut().enumerate() {
                *f = i % k;
            }
        }
        FoldScheme::Shuffled => {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % k;
            }
        }
    }
    Ok(FoldAssignment { n, k, fold_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sensitivity_derivations() {
        let s = make_sensitivity(1.0).unwrap();
        assert_eq!(s.alpha(), 0.5);
        assert_eq!(s.tail_factor(), 2.0);
        assert_eq!(s.inv_lambda(), 1.0);

        // log Λ = 1
        let s = make_sensitivity(std::f64::consts::E).unwrap();
        assert!((s.alpha() - 0.731_059).abs() < 1e-6);
        assert!((s.tail_factor() - 3.718_282).abs() < 1e-6);

        assert!(make_sensitivity(0.5).is_err());
        assert!(make_sensitivity(f64::NAN).is_err());
        assert!(make_sensitivity(f64::INFINITY).is_err());
    }

    #[test]
    fn tail_factor_identity_on_grid() {
        for lambda in [1.0, 1.5, std::f64::consts::E, 5.0] {
            let s = make_sensitivity(lambda).unwrap();
            assert!((s.tail_factor() * (1.0 - s.alpha()) - 1.0).abs() < 1e-12);
            assert!(s.alpha() >= 0.5 && s.alpha() < 1.0);
        }
    }

    #[test]
    fn modular_folds_match_index_rule() {
        let f = assign_folds(4, 2, FoldScheme::Modular, 0).unwrap();
        assert_eq!(f.fold_of, vec![0, 1, 0, 1]);
        let f = assign_folds(2, 2, FoldScheme::Modular, 0).unwrap();
        assert_eq!(f.fold_of, vec![0, 1]);
    }

    #[test]
    fn modular_folds_brute_force() {
        // i mod K, checked exhaustively for moderate n, K.
        for n in [2usize, 3, 17, 100, 1000] {
            for k in 2..=10usize.min(n) {
                let f = assign_folds(n, k, FoldScheme::Modular, 0).unwrap();
                for i in 0..n {
                    assert_eq!(f.fold_of[i], i % k);
                }
            }
        }
    }

    #[test]
    fn shuffled_folds_deterministic_partition() {
        let a = assign_folds(10, 3, FoldScheme::Shuffled, 7).unwrap();
        let b = assign_folds(10, 3, FoldScheme::Shuffled, 7).unwrap();
        assert_eq!(a.fold_of, b.fold_of);
        // every fold non-empty, ids cover 0..k
        let mut counts = vec![0usize; 3];
        for &f in &a.fold_of {
            counts[f] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(counts.iter().sum::<usize>(), 10);
    }

    #[test]
    fn fold_bounds_rejected() {
        assert!(assign_folds(5, 1, FoldScheme::Modular, 0).is_err());
        assert!(assign_folds(3, 4, FoldScheme::Modular, 0).is_err());
    }

    #[test]
    fn validate_accepts_minimal() {
        let ds = Dataset::new(array![[0.0]], vec![1], vec![1.0]);
        validate_dataset(&ds, false).unwrap();
    }

    #[test]
    fn validate_rejects_bad_inputs() {
        let ds = Dataset::new(array![[0.0]], vec![2], vec![1.0]);
        assert!(matches!(
            validate_dataset(&ds, false),
            Err(DomainError::NonBinaryTreatment { .. })
        ));

        let ds = Dataset::new(array![[0.0], [1.0], [2.0]], vec![1, 1, 1], vec![0.0; 3]);
        assert!(matches!(
            validate_dataset(&ds, true),
            Err(DomainError::SingleArm { arm: 1 })
        ));

        let ds = Dataset::new(array![[f64::NAN]], vec![0], vec![0.0]);
        assert!(matches!(
            validate_dataset(&ds, false),
            Err(DomainError::NonFinite { field: "X", .. })
        ));

        let ds = Dataset::new(array![[0.0]], vec![1], vec![1.0])
            .with_potential_outcomes(vec![0.0], vec![2.0]);
        assert!(matches!(
            validate_dataset(&ds, false),
            Err(DomainError::ConsistencyViolation { .. })
        ));
    }

    #[test]
    fn subset_preserves_columns() {
        let ds = Dataset::new(array![[0.0], [1.0], [2.0]], vec![0, 1, 0], vec![5.0, 6.0, 7.0])
            .with_potential_outcomes(vec![5.0, -1.0, 7.0], vec![-1.0, 6.0, -1.0]);
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.y, vec![7.0, 5.0]);
        assert_eq!(sub.a, vec![0, 0]);
        assert_eq!(sub.y1.unwrap(), vec![-1.0, -1.0]);
    }
}
