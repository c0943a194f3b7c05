//! Full-covariance Gaussian mixture fitted by EM.
//!
//! Initialization runs seeded k-means++ followed by Lloyd iterations and
//! starts EM from the resulting hard assignment. EM is restarted from
//! `n_init` such initializations and the fit with the highest final
//! log-likelihood is kept. Every covariance gets a
//! ridge of `ridge * I`; a component whose covariance still fails Cholesky
//! gets the ridge added again, up to `max_retries` times.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_finite, check_shape, AnalysisError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub ridge: f64,
    pub max_retries: usize,
    /// Number of k-means initializations; each uses its own RNG stream.
    pub n_init: usize,
    pub seed: u64,
}

impl GmmConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 500,
            tol: 1e-5,
            ridge: 1e-6,
            max_retries: 10,
            n_init: 10,
            seed,
        }
    }
}

/// Lower Cholesky factor, row-major, with the log-determinant.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    l: Vec<f64>,
    log_det: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub dims: usize,
    pub weights: Vec<f64>,
    /// `k x dims`.
    pub means: Vec<f64>,
    /// `k x dims x dims`, regularized.
    pub covariances: Vec<f64>,
    /// Mean per-row log-likelihood before each M-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    factors: Vec<Factor>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &[f64], dims: usize) -> (usize, f64) {
    centers
        .chunks(dims)
        .enumerate()
        .map(|(c, m)| (c, sq_dist(row, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Seeded k-means++ plus Lloyd refinement; returns hard labels.
fn kmeans(x: &[f64], rows: usize, dims: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers = Vec::with_capacity(k * dims);
    let first = rng.random_range(0..rows);
    centers.extend_from_slice(&x[first * dims..(first + 1) * dims]);
    let mut d2: Vec<f64> = x.chunks(dims).map(|r| sq_dist(r, &centers)).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d2.iter()
                .position(|&d| {
                    u -= d;
                    u < 0.0
                })
                .unwrap_or(rows - 1)
        } else {
            rng.random_range(0..rows)
        };
        let c = &x[pick * dims..(pick + 1) * dims];
        centers.extend_from_slice(c);
        for (d, r) in d2.iter_mut().zip(x.chunks(dims)) {
            *d = d.min(sq_dist(r, c));
        }
    }
    let mut labels = vec![usize::MAX; rows];
    for _ in 0..100 {
        let next: Vec<usize> = x.chunks(dims).map(|r| nearest(r, &centers, dims).0).collect();
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![0.0; k * dims];
        let mut counts = vec![0usize; k];
        for (r, &l) in x.chunks(dims).zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l * dims..(l + 1) * dims].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dims {
                    centers[c * dims + j] = sums[c * dims + j] / counts[c] as f64;
                }
            }
        }
    }
    labels
}

fn factorize(cov: &mut [f64], dims: usize, ridge: f64, retries: usize, comp: usize) -> Result<Factor> {
    for _ in 0..=retries {
        for j in 0..dims {
            cov[j * dims + j] += ridge;
        }
        if let Some(ch) = DMatrix::from_row_slice(dims, dims, cov).cholesky() {
            let l = ch.l();
            let log_det = 2.0 * (0..dims).map(|i| l[(i, i)].ln()).sum::<f64>();
            if log_det.is_finite() {
                let l = (0..dims * dims).map(|i| l[(i / dims, i % dims)]).collect();
                return Ok(Factor { l, log_det });
            }
        }
    }
    Err(AnalysisError::Singular(comp))
}

fn log_gauss(row: &[f64], mean: &[f64], f: &Factor, z: &mut [f64]) -> f64 {
    let d = row.len();
    let mut maha = 0.0;
    for i in 0..d {
        let mut s = row[i] - mean[i];
        for (l, zj) in f.l[i * d..i * d + i].iter().zip(&z[..i]) {
            s -= l * zj;
        }
        z[i] = s / f.l[i * d + i];
        maha += z[i] * z[i];
    }
    -0.5 * (d as f64 * LN_2PI + f.log_det + maha)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Weighted log densities, `rows x k`.
    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = (self.dims, self.k());
        x.par_chunks(d)
            .flat_map_iter(|row| {
                let mut z = vec![0.0; d];
                (0..k)
                    .map(|c| self.weights[c].ln() + log_gauss(row, &self.means[c * d..(c + 1) * d], &self.factors[c], &mut z))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Responsibilities and mean log-likelihood.
    fn e_step(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let k = self.k();
        let mut lj = self.log_joint(x);
        let rows = lj.len() / k;
        let mut ll = 0.0;
        for r in lj.chunks_mut(k) {
            let lse = log_sum_exp(r);
            ll += lse;
            r.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        (lj, ll / rows as f64)
    }

    fn m_step(x: &[f64], dims: usize, resp: &[f64], k: usize, cfg: &GmmConfig) -> Result<Self> {
        let rows = x.len() / dims;
        let mut nk = vec![10.0 * f64::EPSILON; k];
        for r in resp.chunks(k) {
            for (n, v) in nk.iter_mut().zip(r) {
                *n += v;
            }
        }
        let mut means = vec![0.0; k * dims];
        for (row, r) in x.chunks(dims).zip(resp.chunks(k)) {
            for c in 0..k {
                for j in 0..dims {
                    means[c * dims + j] += r[c] * row[j];
                }
            }
        }
        for c in 0..k {
            means[c * dims..(c + 1) * dims].iter_mut().for_each(|m| *m /= nk[c]);
        }
        let per_comp: Vec<Result<(Vec<f64>, Factor)>> = (0..k)
            .into_par_iter()
            .map(|c| {
                let mu = &means[c * dims..(c + 1) * dims];
                let mut cov = vec![0.0; dims * dims];
                let mut diff = vec![0.0; dims];
                for (row, r) in x.chunks(dims).zip(resp.chunks(k)) {
                    let w = r[c];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..dims {
                        diff[j] = row[j] - mu[j];
                    }
                    for a in 0..dims {
                        let wa = w * diff[a];
                        for b in 0..=a {
                            cov[a * dims + b] += wa * diff[b];
                        }
                    }
                }
                for a in 0..dims {
                    for b in 0..=a {
                        let v = cov[a * dims + b] / nk[c];
                        cov[a * dims + b] = v;
                        cov[b * dims + a] = v;
                    }
                }
                let f = factorize(&mut cov, dims, cfg.ridge, cfg.max_retries, c)?;
                Ok((cov, f))
            })
            .collect();
        let mut covariances = Vec::with_capacity(k * dims * dims);
        let mut factors = Vec::with_capacity(k);
        for r in per_comp {
            let (cov, f) = r?;
            covariances.extend(cov);
            factors.push(f);
        }
        Ok(Self {
            dims,
            weights: nk.iter().map(|n| n / rows as f64).collect(),
            means,
            covariances,
            log_likelihood: Vec::new(),
            converged: false,
            factors,
        })
    }

    pub fn fit(x: &[f64], rows: usize, dims: usize, cfg: &GmmConfig) -> Result<Self> {
        check_shape(x, rows, dims)?;
        check_finite(x, "GMM input")?;
        if cfg.k == 0 || rows < cfg.k {
            return Err(AnalysisError::TooFewRows { need: cfg.k.max(1), got: rows });
        }
        let mut best: Option<Self> = None;
        for init in 0..cfg.n_init.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(init as u64);
            let fit = Self::fit_from(x, rows, dims, cfg, &mut rng)?;
            let better = |b: &Self| fit.final_log_likelihood() > b.final_log_likelihood();
            if best.as_ref().is_none_or(better) {
                best = Some(fit);
            }
        }
        Ok(best.expect("at least one initialization"))
    }

    fn fit_from(x: &[f64], rows: usize, dims: usize, cfg: &GmmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = cfg.k;
        let labels = kmeans(x, rows, dims, k, rng);
        let mut resp = vec![0.0; rows * k];
        for (i, &l) in labels.iter().enumerate() {
            resp[i * k + l] = 1.0;
        }
        let mut model = Self::m_step(x, dims, &resp, k, cfg)?;
        let mut trace = Vec::new();
        let mut converged = false;
        for _ in 0..cfg.max_iter {
            let (r, ll) = model.e_step(x);
            let gain = trace.last().map(|&prev: &f64| ll - prev);
            trace.push(ll);
            if gain.is_some_and(|g| g.abs() < cfg.tol) {
                converged = true;
                break;
            }
            model = Self::m_step(x, dims, &r, k, cfg)?;
        }
        model.log_likelihood = trace;
        model.converged = converged;
        Ok(model)
    }

    /// Mean log-likelihood at the last E-step.
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Posterior component probabilities, `rows x k`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !x.len().is_multiple_of(self.dims) {
            return Err(AnalysisError::Shape(format!("{} values for {} columns", x.len(), self.dims)));
        }
        Ok(self.e_step(x).0)
    }

    /// Most probable component per row; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<usize>> {
        let k = self.k();
        Ok(self
            .predict_proba(x)?
            .chunks(k)
            .map(|r| (0..k).fold(0, |best, c| if r[c] > r[best] { c } else { best }))
            .collect())
    }

    /// Mean per-row log-likelihood of `x` under the fitted mixture.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.e_step(x).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_data_is_regularized() {
        // Identical rows give a zero covariance; the ridge makes it usable.
        let x = vec![1.0; 20];
        let g = Gmm::fit(&x, 10, 2, &GmmConfig::new(1, 0)).unwrap();
        assert!((g.covariances[0] - 1e-6).abs() < 1e-12);
        assert!(g.score(&x).is_finite());
    }

    #[test]
    fn rows_must_cover_components() {
        assert!(Gmm::fit(&[0.0, 1.0], 2, 1, &GmmConfig::new(3, 0)).is_err());
    }
}
