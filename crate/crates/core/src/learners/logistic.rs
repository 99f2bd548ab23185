//! Logistic regression via iteratively reweighted least squares.

use ndarray::{ArrayView1, ArrayView2};

use super::LearnerError;

/// Fitted logistic model; `beta[0]` is the intercept.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    beta: Vec<f64>,
}

impl LogisticModel {
    pub fn predict_p(&self, x: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(x.len() + 1, self.beta.len());
        let mut t = self.beta[0];
        for (j, &v) in x.iter().enumerate() {
            t += self.beta[j + 1] * v;
        }
        1.0 / (1.0 + (-t).exp())
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.beta
    }
}

/// Newton/IRLS fit of `P(A=1|x) = σ(β₀ + βᵀx)`.
///
/// Reports divergence (non-finite iterates, exploding coefficients, singular
/// normal equations, or exhausting `max_iter` without meeting `tol` on the
/// step norm) so the caller can fall back to a smoother-based propensity.
pub fn fit_logistic(
    x: ArrayView2<f64>,
    a: &[u8],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel, LearnerError> {
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(LearnerError::EmptyInput);
    }
    if a.len() != n {
        return Err(LearnerError::BadSpec(format!(
            "{} rows vs {} labels",
            n,
            a.len()
        )));
    }
    let p = d + 1;
    let mut beta = vec![0.0f64; p];
    let mut probs = vec![0.0f64; n];

    for iter in 0..max_iter {
        // gradient Xᵀ(a − p) and Hessian XᵀWX with W = p(1−p)
        let mut grad = vec![0.0f64; p];
        let mut hess = vec![0.0f64; p * p];
        for i in 0..n {
            let mut t = beta[0];
            for j in 0..d {
                t += beta[j + 1] * x[[i, j]];
            }
            let pi = 1.0 / (1.0 + (-t).exp());
            probs[i] = pi;
            let w = pi * (1.0 - pi);
            let resid = a[i] as f64 - pi;
            grad[0] += resid;
            hess[0] += w;
            for j in 0..d {
                let xj = x[[i, j]];
                grad[j + 1] += resid * xj;
                hess[j + 1] += w * xj;
                hess[(j + 1) * p] += w * xj;
                for k in 0..=j {
                    hess[(j + 1) * p + k + 1] += w * xj * x[[i, k]];
                }
            }
        }
        // mirror the lower triangle
        for r in 0..p {
            for c in (r + 1)..p {
                hess[r * p + c] = hess[c * p + r];
            }
        }
        let step = solve_spd(&mut hess, &grad, p)
            .ok_or(LearnerError::IrlsDiverged { iterations: iter })?;
        let mut step_norm: f64 = 0.0;
        for j in 0..p {
            beta[j] += step[j];
            step_norm = step_norm.max(step[j].abs());
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > 1e8) {
            return Err(LearnerError::IrlsDiverged { iterations: iter });
        }
        if step_norm < tol {
            return Ok(LogisticModel { beta });
        }
    }
    Err(LearnerError::IrlsDiverged {
        iterations: max_iter,
    })
}

// Cholesky solve of a symmetric positive-definite system, in place.
fn solve_spd(a: &mut [f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    // factor A = LLᵀ
    for j in 0..p {
        let mut diag = a[j * p + j];
        for k in 0..j {
            diag -= a[j * p + k] * a[j * p + k];
        }
        if !(diag > 1e-12 && diag.is_finite()) {
            return None;
        }
        let l_jj = diag.sqrt();
        a[j * p + j] = l_jj;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / l_jj;
        }
    }
    // forward then backward substitution
    let mut y = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            y[i] -= a[i * p + k] * y[k];
        }
        y[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in (i + 1)..p {
            y[i] -= a[k * p + i] * y[k];
        }
        y[i] /= a[i * p + i];
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_known_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 20_000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
        let a: Vec<u8> = (0..n)
            .map(|i| {
                let t = 0.5 + 0.75 * x[[i, 0]] - 0.25 * x[[i, 1]];
                u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-t as f64).exp()))
            })
            .collect();
        let m = fit_logistic(x.view(), &a, 100, 1e-8).unwrap();
        let beta = m.coefficients();
        assert!((beta[0] - 0.5).abs() < 0.1, "intercept {}", beta[0]);
        assert!((beta[1] - 0.75).abs() < 0.1, "slope {}", beta[1]);
        assert!((beta[2] + 0.25).abs() < 0.1, "slope {}", beta[2]);
    }

    #[test]
    fn separable_data_reports_divergence() {
        let mut x = Array2::zeros((40, 1));
        let mut a = vec![0u8; 40];
        for i in 0..40 {
            x[[i, 0]] = i as f64 - 19.5;
            a[i] = u8::from(x[[i, 0]] > 0.0);
        }
        assert!(matches!(
            fit_logistic(x.view(), &a, 100, 1e-8),
            Err(LearnerError::IrlsDiverged { .. })
        ));
    }

    #[test]
    fn balanced_coin_gives_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 5000;
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let a: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let m = fit_logistic(x.view(), &a, 100, 1e-8).unwrap();
        let p = m.predict_p(ndarray::array![0.0].view());
        assert!((p - 0.5).abs() < 0.05);
    }
}
