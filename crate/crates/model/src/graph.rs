//! Reverse-mode differentiation over a recorded operation graph.
//!
//! A [`Graph`] borrows the parameters, records each forward operation with
//! whatever it needs for the backward pass, and is dropped after
//! [`Graph::backward`]. It is rebuilt for every step.

use std::sync::Arc;

use rayon::prelude::*;

use crate::attention::{sparse_attention, sparse_attention_backward, AttnPattern, Qkv, SeqAttn};
use crate::error::{shape_err, ModelError, Result};
use crate::scalar::{gemm, Layout, Scalar};
use crate::tensor::{numel, Gradients, ParamSet, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Param(usize),
    Input,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Attention {
        local: [Var; 3],
        global: Option<[Var; 3]>,
        pattern: Arc<AttnPattern>,
        cache: Vec<SeqAttn<T>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    /// `None` for parameter leaves, whose values live in the [`ParamSet`].
    value: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

fn gelu<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns the value and the derivative.
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    let one = T::one();
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let du = c * (one + three * a * x * x);
    let dy = half * (one + t) + half * x * (one - t * t) * du;
    (y, dy)
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(x), _) => x,
            (None, Op::Param(i)) => &self.params.tensors[*i].data,
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn qkv(&self, v: &[Var; 3]) -> Qkv<'_, T> {
        Qkv {
            q: self.value(v[0]),
            k: self.value(v[1]),
            v: self.value(v[2]),
        }
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        match self.shape(v) {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (1, numel(s)),
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, parents: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for parameter `index` of the borrowed set.
    pub fn param(&mut self, index: usize) -> Var {
        let shape = self.params.tensors[index].shape.clone();
        self.nodes.push(Node {
            shape,
            value: None,
            op: Op::Param(index),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape,
            value: Some(t.data),
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims2(a), self.dims2(b));
        if k != k2 || self.shape(b).len() != 2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut c = vec![T::zero(); m * n];
        gemm(m, k, n, T::one(), self.value(a), Layout::Normal, self.value(b), Layout::Normal, T::zero(), &mut c);
        Ok(self.push(vec![m, n], c, Op::MatMul(a, b), &[a, b]))
    }

    /// `a (m x k) * b^T` where `b` is `n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims2(a), self.dims2(b));
        if k != k2 || self.shape(b).len() != 2 {
            return Err(shape_err("matmul_nt", format!("{:?} x {:?}^T", self.shape(a), self.shape(b))));
        }
        let mut c = vec![T::zero(); m * n];
        gemm(m, k, n, T::one(), self.value(a), Layout::Normal, self.value(b), Layout::Transposed, T::zero(), &mut c);
        Ok(self.push(vec![m, n], c, Op::MatMulNT(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let c = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        Ok(self.push(self.shape(a).to_vec(), c, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let c = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        Ok(self.push(self.shape(a).to_vec(), c, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.dims2(a);
        if self.shape(b) != [n] {
            return Err(shape_err("add_row", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let bias = self.value(b);
        let c = self
            .value(a)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| *x + *y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), c, Op::AddRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let c = self.value(a).iter().map(|x| *x * s).collect();
        self.push(self.shape(a).to_vec(), c, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![], vec![s], Op::Sum(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let c = self.value(a).iter().map(|&x| gelu(x).0).collect();
        self.push(self.shape(a).to_vec(), c, Op::Gelu(a), &[a])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.dims2(a);
        let x = self.value(a);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("softmax", "non-finite input"));
        }
        let mut out = x.to_vec();
        for row in out.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax(a), &[a]))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err("layer_norm", format!("{:?} with affine {:?}", self.shape(x), self.shape(gamma))));
        }
        let eps = T::from_f64(LN_EPS);
        let nf = T::from_f64(n as f64);
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = g[c] * h + b[c];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push(self.shape(x).to_vec(), out, op, &[x, gamma, beta]))
    }

    /// Rows of `table (V x d)` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(ModelError::TokenOutOfRange { id: bad as u32, size: v });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(vec![ids.len(), d], out, op, &[table]))
    }

    /// Rows of `x` selected by `rows`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if rows.iter().any(|&r| r >= m) {
            return Err(shape_err("gather_rows", format!("row index out of {m} rows")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&xv[r * n..(r + 1) * n]);
        }
        let op = Op::GatherRows {
            x,
            rows: rows.to_vec(),
        };
        Ok(self.push(vec![rows.len(), n], out, op, &[x]))
    }

    /// Multi-head sparse attention over `batch * len` rows.
    pub fn attention(&mut self, local: [Var; 3], global: Option<[Var; 3]>, pattern: Arc<AttnPattern>) -> Result<Var> {
        let shape = self.shape(local[0]).to_vec();
        let (_, dims) = self.dims2(local[0]);
        let (out, cache) = sparse_attention(self.qkv(&local), global.as_ref().map(|v| self.qkv(v)), dims, &pattern)?;
        let mut parents = local.to_vec();
        parents.extend(global.iter().flatten());
        let op = Op::Attention {
            local,
            global,
            pattern,
            cache,
        };
        Ok(self.push(shape, out, op, &parents))
    }

    /// Mean natural-log cross-entropy over rows whose target is present.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, v) = self.dims2(logits);
        if targets.len() != m {
            return Err(shape_err("cross_entropy", format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(ModelError::TokenOutOfRange { id: *bad as u32, size: v });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(ModelError::AllIgnored);
        }
        let mut probs = self.value(logits).to_vec();
        let losses: Vec<T> = probs
            .par_chunks_mut(v)
            .zip(targets)
            .map(|(row, t)| {
                let lse = log_sum_exp(row);
                let loss = t.map_or(T::zero(), |t| lse - row[t]);
                for x in row.iter_mut() {
                    *x = (*x - lse).exp();
                }
                loss
            })
            .collect();
        let loss = losses.iter().copied().sum::<T>() / T::from_f64(count as f64);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            count,
        };
        Ok(self.push(vec![], vec![loss], op, &[logits]))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if numel(shape) != 1 || !shape.is_empty() && shape != [1] {
            return Err(ModelError::NonScalarLoss(shape.to_vec()));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for n in (0..=loss.0).rev() {
            let Some(g) = grads[n].take() else { continue };
            let node = &self.nodes[n];
            if !node.requires_grad {
                continue;
            }
            let wants = |v: &Var| self.nodes[v.0].requires_grad;
            let size = |v: &Var| numel(&self.nodes[v.0].shape);
            match &node.op {
                Op::Param(i) => {
                    for (a, b) in out.grads[*i].iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let ((m, k), (_, nn)) = (self.dims2(*a), self.dims2(*b));
                    if wants(a) {
                        let bv = self.value(*b);
                        accumulate(&mut grads[a.0], m * k, |da| {
                            gemm(m, nn, k, T::one(), &g, Layout::Normal, bv, Layout::Transposed, T::one(), da)
                        });
                    }
                    if wants(b) {
                        let av = self.value(*a);
                        accumulate(&mut grads[b.0], k * nn, |db| {
                            gemm(k, m, nn, T::one(), av, Layout::Transposed, &g, Layout::Normal, T::one(), db)
                        });
                    }
                }
                Op::MatMulNT(a, b) => {
                    let ((m, k), (nn, _)) = (self.dims2(*a), self.dims2(*b));
                    if wants(a) {
                        let bv = self.value(*b);
                        accumulate(&mut grads[a.0], m * k, |da| {
                            gemm(m, nn, k, T::one(), &g, Layout::Normal, bv, Layout::Normal, T::one(), da)
                        });
                    }
                    if wants(b) {
                        let av = self.value(*a);
                        accumulate(&mut grads[b.0], nn * k, |db| {
                            gemm(nn, m, k, T::one(), &g, Layout::Transposed, av, Layout::Normal, T::one(), db)
                        });
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if wants(v) {
                            accumulate(&mut grads[v.0], g.len(), |d| add_into(d, &g));
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(a, b), (b, a)] {
                        if wants(v) {
                            let ov = self.value(*other);
                            accumulate(&mut grads[v.0], g.len(), |d| {
                                for ((x, y), z) in d.iter_mut().zip(&g).zip(ov) {
                                    *x += *y * *z;
                                }
                            });
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.len(), |d| add_into(d, &g));
                    }
                    if wants(b) {
                        let n = size(b);
                        accumulate(&mut grads[b.0], n, |d| {
                            for row in g.chunks(n) {
                                add_into(d, row);
                            }
                        });
                    }
                }
                Op::Scale(a, s) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.len(), |d| {
                            for (x, y) in d.iter_mut().zip(&g) {
                                *x += *y * *s;
                            }
                        });
                    }
                }
                Op::Sum(a) => {
                    if wants(a) {
                        let n = size(a);
                        accumulate(&mut grads[a.0], n, |d| d.iter_mut().for_each(|x| *x += g[0]));
                    }
                }
                Op::Gelu(a) => {
                    if wants(a) {
                        let av = self.value(*a);
                        accumulate(&mut grads[a.0], g.len(), |d| {
                            for ((x, y), z) in d.iter_mut().zip(&g).zip(av) {
                                *x += *y * gelu(*z).1;
                            }
                        });
                    }
                }
                Op::Softmax(a) => {
                    if wants(a) {
                        let (_, n) = self.dims2(*a);
                        let y = node.value.as_ref().expect("softmax output");
                        accumulate(&mut grads[a.0], g.len(), |d| {
                            for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                                let dot: T = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                                for ((x, p), q) in dr.iter_mut().zip(yr).zip(gr) {
                                    *x += *p * (*q - dot);
                                }
                            }
                        });
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (_, n) = self.dims2(*x);
                    let gv = self.value(*gamma);
                    if wants(gamma) {
                        accumulate(&mut grads[gamma.0], n, |d| {
                            for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                                for ((x, a), b) in d.iter_mut().zip(gr).zip(hr) {
                                    *x += *a * *b;
                                }
                            }
                        });
                    }
                    if wants(beta) {
                        accumulate(&mut grads[beta.0], n, |d| {
                            for gr in g.chunks(n) {
                                add_into(d, gr);
                            }
                        });
                    }
                    if wants(x) {
                        let nf = T::from_f64(n as f64);
                        accumulate(&mut grads[x.0], g.len(), |d| {
                            for (r, ((dr, gr), hr)) in d.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                                let mut m1 = T::zero();
                                let mut m2 = T::zero();
                                for c in 0..n {
                                    let dh = gr[c] * gv[c];
                                    m1 += dh;
                                    m2 += dh * hr[c];
                                }
                                m1 /= nf;
                                m2 /= nf;
                                for c in 0..n {
                                    let dh = gr[c] * gv[c];
                                    dr[c] += rstd[r] * (dh - m1 - hr[c] * m2);
                                }
                            }
                        });
                    }
                }
                Op::Embedding { table, ids } => {
                    if wants(table) {
                        let (_, dd) = self.dims2(*table);
                        accumulate(&mut grads[table.0], size(table), |d| {
                            for (row, &i) in g.chunks(dd).zip(ids) {
                                add_into(&mut d[i * dd..(i + 1) * dd], row);
                            }
                        });
                    }
                }
                Op::GatherRows { x, rows } => {
                    if wants(x) {
                        let (_, nn) = self.dims2(*x);
                        accumulate(&mut grads[x.0], size(x), |d| {
                            for (row, &r) in g.chunks(nn).zip(rows) {
                                add_into(&mut d[r * nn..(r + 1) * nn], row);
                            }
                        });
                    }
                }
                Op::Attention {
                    local,
                    global,
                    pattern,
                    cache,
                } => {
                    let (_, dims) = self.dims2(local[0]);
                    let ag = sparse_attention_backward(
                        self.qkv(local),
                        global.as_ref().map(|v| self.qkv(v)),
                        dims,
                        pattern,
                        cache,
                        &g,
                    );
                    for (v, dv) in local.iter().zip([ag.dq, ag.dk, ag.dv]) {
                        if wants(v) {
                            accumulate(&mut grads[v.0], dv.len(), |d| add_into(d, &dv));
                        }
                    }
                    if let (Some(vars), Some(gg)) = (global, ag.global) {
                        for (v, dv) in vars.iter().zip(gg) {
                            if wants(v) {
                                accumulate(&mut grads[v.0], dv.len(), |d| add_into(d, &dv));
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    if wants(logits) {
                        let (_, v) = self.dims2(*logits);
                        let s = g[0] / T::from_f64(*count as f64);
                        accumulate(&mut grads[logits.0], probs.len(), |d| {
                            d.par_chunks_mut(v).zip(probs.par_chunks(v)).zip(targets).for_each(|((dr, pr), t)| {
                                if let Some(t) = t {
                                    for (x, p) in dr.iter_mut().zip(pr) {
                                        *x += s * *p;
                                    }
                                    dr[*t] -= s;
                                }
                            });
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_into<T: Scalar>(d: &mut [T], g: &[T]) {
    for (x, y) in d.iter_mut().zip(g) {
        *x += *y;
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|x| (*x - max).exp()).sum();
    max + s.ln()
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}
