//! Linear PCA by eigendecomposition of the sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_finite, check_shape, AnalysisError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub dims: usize,
    pub mean: Vec<f64>,
    /// `k x dims`, one unit-length component per row.
    pub components: Vec<f64>,
    /// Covariance eigenvalue of each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Fits the top `k` components. Requires `k <= min(rows - 1, dims)`.
    pub fn fit(x: &[f64], rows: usize, dims: usize, k: usize) -> Result<Self> {
        check_shape(x, rows, dims)?;
        check_finite(x, "PCA input")?;
        let max = dims.min(rows.saturating_sub(1));
        if k == 0 || k > max {
            return Err(AnalysisError::TooManyComponents { k, max });
        }
        let mut mean = vec![0.0; dims];
        for row in x.chunks(dims) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let centered = DMatrix::from_fn(rows, dims, |i, j| x[i * dims + j] - mean[j]);
        let cov = (centered.transpose() * &centered) / (rows - 1) as f64;
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..dims).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(k * dims);
        let mut explained_variance = Vec::with_capacity(k);
        for &c in &order[..k] {
            let v = eig.eigenvectors.column(c);
            // Deterministic sign: the largest-magnitude entry is positive.
            let pivot = (0..dims).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
            let s = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            components.extend(v.iter().map(|x| s * x));
            explained_variance.push(eig.eigenvalues[c].max(0.0));
        }
        Ok(Self {
            dims,
            mean,
            components,
            explained_variance,
        })
    }

    pub fn k(&self) -> usize {
        self.explained_variance.len()
    }

    /// Centered rows times the transposed components, `rows x k`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !x.len().is_multiple_of(self.dims) {
            return Err(AnalysisError::Shape(format!("{} values for {} columns", x.len(), self.dims)));
        }
        let k = self.k();
        let mut out = Vec::with_capacity(x.len() / self.dims * k);
        for row in x.chunks(self.dims) {
            for c in self.components.chunks(self.dims) {
                out.push(row.iter().zip(&self.mean).zip(c).map(|((v, m), w)| (v - m) * w).sum());
            }
        }
        Ok(out)
    }

    /// Maps reduced rows back to the input space.
    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut out = Vec::with_capacity(z.len() / k * self.dims);
        for row in z.chunks(k) {
            let mut x = self.mean.clone();
            for (zc, c) in row.iter().zip(self.components.chunks(self.dims)) {
                for (xi, w) in x.iter_mut().zip(c) {
                    *xi += zc * w;
                }
            }
            out.extend(x);
        }
        out
    }

    /// Largest absolute entry of `C C^T - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let rows: Vec<&[f64]> = self.components.chunks(self.dims).collect();
        let mut worst = 0.0f64;
        for (i, a) in rows.iter().enumerate() {
            for (j, b) in rows.iter().enumerate() {
                let dot: f64 = a.iter().zip(*b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }
}
