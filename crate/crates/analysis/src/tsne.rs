//! Exact t-SNE with early exaggeration, momentum and adaptive gains.
//!
//! Work is quadratic in the number of rows, which is fine for a few
//! thousand players. Every row-parallel step writes to its own slot and
//! reductions run sequentially, so results do not depend on the thread
//! count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{check_finite, check_shape, AnalysisError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// `None` selects `max(rows / 12, 50)`.
    pub learning_rate: Option<f64>,
    pub seed: u64,
    /// KL divergence is recorded every this many iterations.
    pub trace_every: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
            seed: 0,
            trace_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub out_dims: usize,
    /// `rows x out_dims`.
    pub coords: Vec<f64>,
    /// `(iteration, KL(P || Q))` pairs, starting with the initial layout.
    pub kl_trace: Vec<(usize, f64)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Conditional affinities of one row whose entropy matches
/// `ln(perplexity)`, found by bisection on the precision.
fn row_affinities(d2: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let dmin = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    let mut p = vec![0.0; d2.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (&d, pj)) in d2.iter().zip(p.iter_mut()).enumerate() {
            if j == i {
                *pj = 0.0;
                continue;
            }
            let shifted = d - dmin;
            *pj = (-shifted * beta).exp();
            sum += *pj;
            weighted += shifted * *pj;
        }
        let h = sum.ln() + beta * weighted / sum;
        p.iter_mut().for_each(|x| *x /= sum);
        let diff = h - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

fn kl(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(1e-300)).ln())
        .sum()
}

/// Embeds `rows x dims` data into `cfg.out_dims` dimensions.
pub fn tsne(x: &[f64], rows: usize, dims: usize, cfg: &TsneConfig) -> Result<TsneResult> {
    check_shape(x, rows, dims)?;
    check_finite(x, "t-SNE input")?;
    if cfg.perplexity.is_nan() || cfg.perplexity <= 0.0 {
        return Err(AnalysisError::Shape(format!("perplexity must be positive, got {}", cfg.perplexity)));
    }
    let need = (3.0 * cfg.perplexity).ceil() as usize;
    if rows < need.max(2) {
        return Err(AnalysisError::TooFewRows { need: need.max(2), got: rows });
    }
    let n = rows;
    let od = cfg.out_dims;

    let cond: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * dims..(i + 1) * dims];
            let d2: Vec<f64> = (0..n).map(|j| sq_dist(xi, &x[j * dims..(j + 1) * dims])).collect();
            row_affinities(&d2, i, cfg.perplexity)
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    drop(cond);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..n * od).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; n * od];
    let mut gains = vec![1.0f64; n * od];
    let lr = cfg.learning_rate.unwrap_or((n as f64 / 12.0).max(50.0));
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::new();

    for t in 0..=cfg.iterations {
        num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let yi = &y[i * od..(i + 1) * od];
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 0.0 } else { 1.0 / (1.0 + sq_dist(yi, &y[j * od..(j + 1) * od])) };
            }
        });
        let row_sums: Vec<f64> = num.par_chunks(n).map(|r| r.iter().sum()).collect();
        let z: f64 = row_sums.iter().sum();
        if t == cfg.iterations || t % cfg.trace_every.max(1) == 0 {
            kl_trace.push((t, kl(&p, &num, z)));
        }
        if t == cfg.iterations {
            break;
        }
        let exag = if t < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if t < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let grad: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut g = vec![0.0; od];
                let yi = &y[i * od..(i + 1) * od];
                for j in 0..n {
                    let nij = num[i * n + j];
                    let m = (exag * p[i * n + j] - nij / z) * nij;
                    for (gd, (a, b)) in g.iter_mut().zip(yi.iter().zip(&y[j * od..(j + 1) * od])) {
                        *gd += 4.0 * m * (a - b);
                    }
                }
                g
            })
            .collect();
        for ((yv, (u, gn)), g) in y.iter_mut().zip(update.iter_mut().zip(gains.iter_mut())).zip(&grad) {
            *gn = if (*g > 0.0) != (*u > 0.0) { *gn + 0.2 } else { *gn * 0.8 };
            *gn = (*gn).max(0.01);
            *u = momentum * *u - lr * *gn * g;
            *yv += *u;
        }
        for d in 0..od {
            let mean = (0..n).map(|i| y[i * od + d]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * od + d] -= mean);
        }
    }
    check_finite(&y, "t-SNE output")?;
    Ok(TsneResult {
        out_dims: od,
        coords: y,
        kl_trace,
    })
}
