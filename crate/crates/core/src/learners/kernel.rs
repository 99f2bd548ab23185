//! RBF kernel smoother (Nadaraya–Watson weights).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{LearnerError, WeightSmoother};

/// RBF smoother configuration. Without an explicit `length_scale` the
/// rule-of-thumb `0.9·m^(−1/(4+d))` is applied on standardized covariates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelSpec {
    pub length_scale: Option<f64>,
}

/// Gaussian-kernel weights over the training rows:
/// `wᵢ(x) ∝ exp(−‖x̃ − X̃ᵢ‖² / (2ℓ²))` on per-column standardized
/// coordinates (training-set mean/scale).
pub struct KernelSmoother {
    x: Array2<f64>, // standardized
    mean: Array1<f64>,
    scale: Array1<f64>,
    length_scale: f64,
}

impl KernelSmoother {
    pub fn fit(x: ArrayView2<f64>, spec: &KernelSpec) -> Result<Self, LearnerError> {
        let (m, d) = (x.nrows(), x.ncols());
        if m == 0 || d == 0 {
            return Err(LearnerError::EmptyInput);
        }
        if let Some(l) = spec.length_scale {
            if !(l.is_finite() && l > 0.0) {
                return Err(LearnerError::BadSpec(format!("length_scale {l}")));
            }
        }
        let mut mean = Array1::zeros(d);
        let mut scale = Array1::ones(d);
        for j in 0..d {
            let col = x.column(j);
            let mu = col.sum() / m as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            mean[j] = mu;
            // constant columns contribute no distance; unit scale avoids 0/0
            scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        let mut xs = x.to_owned();
        for j in 0..d {
            let (mu, sd) = (mean[j], scale[j]);
            xs.column_mut(j).mapv_inplace(|v| (v - mu) / sd);
        }
        let length_scale = spec
            .length_scale
            .unwrap_or_else(|| 0.9 * (m as f64).powf(-1.0 / (4.0 + d as f64)));
        Ok(Self {
            x: xs,
            mean,
            scale,
            length_scale,
        })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// A smoother over new rows reusing this one's standardization and
    /// bandwidth. Used by the half-sample second stage, where the weighting
    /// function is learned on a different sample than the values it averages.
    pub fn reweight_rows(&self, rows: ArrayView2<f64>) -> KernelSmoother {
        let d = self.x.ncols();
        assert_eq!(rows.ncols(), d, "row dimension mismatch");
        let mut xs = rows.to_owned();
        for j in 0..d {
            let (mu, sd) = (self.mean[j], self.scale[j]);
            xs.column_mut(j).mapv_inplace(|v| (v - mu) / sd);
        }
        KernelSmoother {
            x: xs,
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            length_scale: self.length_scale,
        }
    }
}

impl WeightSmoother for KernelSmoother {
    fn weights(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let d = self.x.ncols();
        assert_eq!(x.len(), d, "query dimension mismatch");
        let q: Vec<f64> = (0..d)
            .map(|j| (x[j] - self.mean[j]) / self.scale[j])
            .collect();
        let inv_two_l2 = 1.0 / (2.0 * self.length_scale * self.length_scale);
        let mut logw: Vec<f64> = (0..self.x.nrows())
            .map(|i| {
                let row = self.x.row(i);
                let mut d2 = 0.0;
                for j in 0..d {
                    let diff = q[j] - row[j];
                    d2 += diff * diff;
                }
                -d2 * inv_two_l2
            })
            .collect();
        // softmax-style normalization keeps far queries finite
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for w in logw.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        for w in logw.iter_mut() {
            *w /= sum;
        }
        logw
    }

    fn n_train(&self) -> usize {
        self.x.nrows()
    }
}
