//! Dilated sliding-window attention with global positions.
//!
//! Query `i` of a sequence attends to every valid key `j` with
//! `|i - j| <= window * dilation` and `(i - j) % dilation == 0`, plus every
//! valid global key. A global query attends to every valid key. Padded
//! queries produce zero output and padded keys get zero weight.
//!
//! When separate global projections are supplied, global queries score
//! and aggregate with them; local queries always use the regular ones.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AttnPattern {
    pub batch: usize,
    pub len: usize,
    pub heads: usize,
    pub window: usize,
    pub dilation: usize,
    /// Global flags, `batch * len`.
    pub global: Vec<bool>,
    /// Validity (non-padding) flags, `batch * len`.
    pub valid: Vec<bool>,
}

impl AttnPattern {
    pub fn new(
        batch: usize,
        len: usize,
        heads: usize,
        window: usize,
        dilation: usize,
        global: Vec<bool>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if window == 0 || dilation == 0 || heads == 0 {
            return Err(shape_err("attention", "window, dilation and heads must be at least 1"));
        }
        if global.len() != batch * len || valid.len() != batch * len {
            return Err(shape_err(
                "attention",
                format!("flags must have {} entries", batch * len),
            ));
        }
        Ok(Self {
            batch,
            len,
            heads,
            window,
            dilation,
            global,
            valid,
        })
    }

    /// Whether query `i` may attend to key `j` within sequence `b`.
    pub fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        let o = b * self.len;
        if !self.valid[o + i] || !self.valid[o + j] {
            return false;
        }
        if self.global[o + i] || self.global[o + j] {
            return true;
        }
        let d = i.abs_diff(j);
        d <= self.window * self.dilation && d.is_multiple_of(self.dilation)
    }

    /// Allowed keys of query `i` in ascending order.
    fn keys_into(&self, b: usize, i: usize, globals: &[u32], out: &mut Vec<u32>) {
        let o = b * self.len;
        if !self.valid[o + i] {
            return;
        }
        if self.global[o + i] {
            out.extend((0..self.len as u32).filter(|&j| self.valid[o + j as usize]));
            return;
        }
        let reach = self.window * self.dilation;
        let lo = i.saturating_sub(reach);
        let hi = (i + reach).min(self.len - 1);
        // First local key congruent to i modulo the dilation.
        let start = lo + (i - lo) % self.dilation;
        let mut local = (start..=hi).step_by(self.dilation).map(|j| j as u32).peekable();
        let mut glob = globals.iter().copied().peekable();
        loop {
            let next = match (local.peek(), glob.peek()) {
                (None, None) => break,
                (Some(&a), None) => {
                    local.next();
                    a
                }
                (None, Some(&g)) => {
                    glob.next();
                    g
                }
                (Some(&a), Some(&g)) => {
                    if a < g {
                        local.next();
                        a
                    } else {
                        if a == g {
                            local.next();
                        }
                        glob.next();
                        g
                    }
                }
            };
            if self.valid[o + next as usize] {
                out.push(next);
            }
        }
    }
}

/// Sparse attention weights of one sequence, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqAttn<T> {
    /// CSR offsets into `keys`, one entry per query plus one.
    pub offsets: Vec<usize>,
    pub keys: Vec<u32>,
    /// Weights, head-major: `probs[h * keys.len() + e]`.
    pub probs: Vec<T>,
}

impl<T: Scalar> SeqAttn<T> {
    /// Attention weights of query `i` under head `h`, with their keys.
    pub fn row(&self, h: usize, i: usize) -> (&[u32], &[T]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        let nnz = self.keys.len();
        (&self.keys[a..b], &self.probs[h * nnz + a..h * nnz + b])
    }
}

/// Query/key/value projections, each `batch * len` rows of `dims` columns.
#[derive(Debug, Clone, Copy)]
pub struct Qkv<'a, T> {
    pub q: &'a [T],
    pub k: &'a [T],
    pub v: &'a [T],
}

fn check_qkv<T>(x: &Qkv<'_, T>, rows: usize, dims: usize) -> Result<()> {
    for (name, m) in [("q", x.q), ("k", x.k), ("v", x.v)] {
        if m.len() != rows * dims {
            return Err(shape_err(
                "attention",
                format!("{name} has {} elements, expected {rows}x{dims}", m.len()),
            ));
        }
    }
    Ok(())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// Forward pass. Returns the context (`batch * len` rows of `dims`) and the
/// per-sequence weights.
pub fn sparse_attention<T: Scalar>(
    local: Qkv<'_, T>,
    global: Option<Qkv<'_, T>>,
    dims: usize,
    p: &AttnPattern,
) -> Result<(Vec<T>, Vec<SeqAttn<T>>)> {
    let rows = p.batch * p.len;
    check_qkv(&local, rows, dims)?;
    if let Some(g) = &global {
        check_qkv(g, rows, dims)?;
    }
    if !dims.is_multiple_of(p.heads) {
        return Err(shape_err("attention", format!("{dims} dims do not split into {} heads", p.heads)));
    }
    let dh = dims / p.heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let seq_len = p.len * dims;

    let results: Vec<(Vec<T>, SeqAttn<T>)> = (0..p.batch)
        .into_par_iter()
        .map(|b| {
            let o = b * p.len;
            let globals: Vec<u32> = (0..p.len as u32)
                .filter(|&j| p.global[o + j as usize] && p.valid[o + j as usize])
                .collect();
            let mut offsets = Vec::with_capacity(p.len + 1);
            let mut keys = Vec::new();
            offsets.push(0);
            for i in 0..p.len {
                p.keys_into(b, i, &globals, &mut keys);
                offsets.push(keys.len());
            }
            let nnz = keys.len();
            let mut probs = vec![T::zero(); p.heads * nnz];
            let mut out = vec![T::zero(); seq_len];
            let mut scores: Vec<T> = Vec::new();
            for i in 0..p.len {
                let (a, e) = (offsets[i], offsets[i + 1]);
                if a == e {
                    continue;
                }
                let src = match global {
                    Some(g) if p.global[o + i] => g,
                    _ => local,
                };
                for h in 0..p.heads {
                    let cols = h * dh..(h + 1) * dh;
                    let qi = &src.q[(o + i) * dims..][cols.clone()];
                    scores.clear();
                    let mut max = T::neg_infinity();
                    for &j in &keys[a..e] {
                        let kj = &src.k[(o + j as usize) * dims..][cols.clone()];
                        let s = dot(qi, kj) * scale;
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut z = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let w = &mut probs[h * nnz + a..h * nnz + e];
                    let orow = &mut out[i * dims..][cols.clone()];
                    for ((pw, s), &j) in w.iter_mut().zip(&scores).zip(&keys[a..e]) {
                        *pw = *s / z;
                        let vj = &src.v[(o + j as usize) * dims..][cols.clone()];
                        for (x, y) in orow.iter_mut().zip(vj) {
                            *x += *pw * *y;
                        }
                    }
                }
            }
            (out, SeqAttn { offsets, keys, probs })
        })
        .collect();

    let mut out = Vec::with_capacity(rows * dims);
    let mut cache = Vec::with_capacity(p.batch);
    for (o, c) in results {
        out.extend(o);
        cache.push(c);
    }
    Ok((out, cache))
}

/// Gradients of the attention inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
    /// Present when global projections were used.
    pub global: Option<[Vec<T>; 3]>,
}

/// Backward pass given the upstream gradient of the context.
pub fn sparse_attention_backward<T: Scalar>(
    local: Qkv<'_, T>,
    global: Option<Qkv<'_, T>>,
    dims: usize,
    p: &AttnPattern,
    cache: &[SeqAttn<T>],
    dout: &[T],
) -> AttnGrads<T> {
    let dh = dims / p.heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let seq_len = p.len * dims;

    type Item<T> = ([Vec<T>; 3], Option<[Vec<T>; 3]>);
    let per_seq: Vec<Item<T>> = (0..p.batch)
        .into_par_iter()
        .map(|b| {
            let o = b * p.len;
            let c = &cache[b];
            let nnz = c.keys.len();
            let zero = || vec![T::zero(); seq_len];
            let mut lg = [zero(), zero(), zero()];
            let mut gg = global.map(|_| [zero(), zero(), zero()]);
            let mut dp: Vec<T> = Vec::new();
            for i in 0..p.len {
                let (a, e) = (c.offsets[i], c.offsets[i + 1]);
                if a == e {
                    continue;
                }
                let use_global = global.is_some() && p.global[o + i];
                let src = if use_global { global.unwrap() } else { local };
                let grads = if use_global { gg.as_mut().unwrap() } else { &mut lg };
                let [dq, dk, dv] = grads;
                for h in 0..p.heads {
                    let cols = h * dh..(h + 1) * dh;
                    let w = &c.probs[h * nnz + a..h * nnz + e];
                    let go = &dout[(o + i) * dims..][cols.clone()];
                    dp.clear();
                    let mut t = T::zero();
                    for (&j, &pw) in c.keys[a..e].iter().zip(w) {
                        let jr = j as usize * dims;
                        let vj = &src.v[o * dims + jr..][cols.clone()];
                        let g = dot(go, vj);
                        t += pw * g;
                        dp.push(g);
                        for (x, y) in dv[jr..][cols.clone()].iter_mut().zip(go) {
                            *x += pw * *y;
                        }
                    }
                    let qi = &src.q[(o + i) * dims..][cols.clone()];
                    for ((&j, &pw), &g) in c.keys[a..e].iter().zip(w).zip(&dp) {
                        let ds = pw * (g - t) * scale;
                        let jr = j as usize * dims;
                        let kj = &src.k[o * dims + jr..][cols.clone()];
                        for (x, y) in dq[i * dims..][cols.clone()].iter_mut().zip(kj) {
                            *x += ds * *y;
                        }
                        for (x, y) in dk[jr..][cols.clone()].iter_mut().zip(qi) {
                            *x += ds * *y;
                        }
                    }
                }
            }
            (lg, gg)
        })
        .collect();

    let rows = p.batch * p.len;
    let mut out = AttnGrads {
        dq: Vec::with_capacity(rows * dims),
        dk: Vec::with_capacity(rows * dims),
        dv: Vec::with_capacity(rows * dims),
        global: global.map(|_| [Vec::new(), Vec::new(), Vec::new()]),
    };
    for ([dq, dk, dv], g) in per_seq {
        out.dq.extend(dq);
        out.dk.extend(dk);
        out.dv.extend(dv);
        if let (Some(acc), Some(g)) = (out.global.as_mut(), g) {
            for (a, x) in acc.iter_mut().zip(g) {
                a.extend(x);
            }
        }
    }
    out
}
