//! Pre-norm transformer encoder with sparse attention and a tied MLM head.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::AttnPattern;
use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::graph::{Graph, Var};
use crate::masking::{Batch, MaskedBatch};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, ParamSet, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerParams {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    global: Option<[Linear; 3]>,
    o: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ParamLayout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerParams>,
    ln_f: Norm,
    head_bias: usize,
}

/// Parameter names and shapes in registration order.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dims;
    let f = d * cfg.ffn_mult;
    let mut specs = vec![
        ("tok_emb".to_string(), vec![cfg.vocab_size, d]),
        ("pos_emb".to_string(), vec![cfg.block_size, d]),
    ];
    let linear = |specs: &mut Vec<(String, Vec<usize>)>, name: String, i: usize, o: usize| {
        specs.push((format!("{name}.weight"), vec![i, o]));
        specs.push((format!("{name}.bias"), vec![o]));
    };
    for l in 0..cfg.layers {
        let p = format!("layer{l}");
        specs.push((format!("{p}.ln1.gamma"), vec![d]));
        specs.push((format!("{p}.ln1.beta"), vec![d]));
        for n in ["q", "k", "v"] {
            linear(&mut specs, format!("{p}.attn.{n}"), d, d);
        }
        if cfg.global_projections {
            for n in ["q_global", "k_global", "v_global"] {
                linear(&mut specs, format!("{p}.attn.{n}"), d, d);
            }
        }
        linear(&mut specs, format!("{p}.attn.o"), d, d);
        specs.push((format!("{p}.ln2.gamma"), vec![d]));
        specs.push((format!("{p}.ln2.beta"), vec![d]));
        linear(&mut specs, format!("{p}.ffn.up"), d, f);
        linear(&mut specs, format!("{p}.ffn.down"), f, d);
    }
    specs.push(("final_ln.gamma".to_string(), vec![d]));
    specs.push(("final_ln.beta".to_string(), vec![d]));
    specs.push(("head.bias".to_string(), vec![cfg.vocab_size]));
    specs
}

fn layout(cfg: &ModelConfig, params: &ParamSet<impl Scalar>) -> Result<ParamLayout> {
    let idx = |n: String| {
        params
            .index_of(&n)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{n}`")))
    };
    let lin = |n: String| -> Result<Linear> {
        Ok(Linear {
            w: idx(format!("{n}.weight"))?,
            b: idx(format!("{n}.bias"))?,
        })
    };
    let norm = |n: String| -> Result<Norm> {
        Ok(Norm {
            gamma: idx(format!("{n}.gamma"))?,
            beta: idx(format!("{n}.beta"))?,
        })
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = format!("layer{l}");
        let global = if cfg.global_projections {
            Some([
                lin(format!("{p}.attn.q_global"))?,
                lin(format!("{p}.attn.k_global"))?,
                lin(format!("{p}.attn.v_global"))?,
            ])
        } else {
            None
        };
        layers.push(LayerParams {
            ln1: norm(format!("{p}.ln1"))?,
            q: lin(format!("{p}.attn.q"))?,
            k: lin(format!("{p}.attn.k"))?,
            v: lin(format!("{p}.attn.v"))?,
            global,
            o: lin(format!("{p}.attn.o"))?,
            ln2: norm(format!("{p}.ln2"))?,
            ff1: lin(format!("{p}.ffn.up"))?,
            ff2: lin(format!("{p}.ffn.down"))?,
        });
    }
    Ok(ParamLayout {
        tok: idx("tok_emb".into())?,
        pos: idx("pos_emb".into())?,
        layers,
        ln_f: norm("final_ln".into())?,
        head_bias: idx("head.bias".into())?,
    })
}

/// Loss and predictions of one MLM forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmOutput<T> {
    pub loss: T,
    /// Logits at the masked positions, `labels.len() x vocab_size`.
    pub logits: Vec<T>,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    layout: ParamLayout,
}

impl<T: Scalar> Model<T> {
    /// Fresh weights: N(0, 0.02) for matrices and embeddings, zero biases,
    /// unit layer-norm scales.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamSet::new();
        for (name, shape) in param_specs(&config) {
            let t = if name.ends_with(".gamma") {
                Tensor::filled(shape, T::one())
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Tensor::zeros(shape)
            } else {
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
                Tensor::new(shape, data)?
            };
            params.push(name, t);
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape) in &specs {
            match params.get(name) {
                Some(t) if &t.shape == shape => {}
                Some(t) => {
                    return Err(ModelError::Checkpoint(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                None => return Err(ModelError::Checkpoint(format!("missing parameter `{name}`"))),
            }
        }
        let layout = layout(&config, &params)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn check_batch(&self, b: &Batch) -> Result<()> {
        if b.len > self.config.block_size {
            return Err(ModelError::TooLong {
                len: b.len,
                block: self.config.block_size,
            });
        }
        if let Some(&id) = b.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph<'_, T>, x: Var, l: Linear) -> Result<Var> {
        let w = g.param(l.w);
        let b = g.param(l.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph<'_, T>, x: Var, n: Norm) -> Result<Var> {
        let gamma = g.param(n.gamma);
        let beta = g.param(n.beta);
        g.layer_norm(x, gamma, beta)
    }

    /// Records the encoder on `g`; returns final hidden states with
    /// `batch * len` rows of `dims` columns.
    pub fn forward(&self, g: &mut Graph<'_, T>, batch: &Batch) -> Result<Var> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.len).collect();
        let tok = g.param(self.layout.tok);
        let pos = g.param(self.layout.pos);
        let te = g.embedding(tok, &ids)?;
        let pe = g.embedding(pos, &positions)?;
        let mut x = g.add(te, pe)?;

        let global = batch.global_flags();
        let mut patterns: Vec<(usize, Arc<AttnPattern>)> = Vec::new();
        for (l, lp) in self.layout.layers.iter().enumerate() {
            let dil = cfg.dilation[l];
            let pattern = match patterns.iter().find(|(d, _)| *d == dil) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = Arc::new(AttnPattern::new(
                        batch.batch,
                        batch.len,
                        cfg.heads,
                        cfg.window,
                        dil,
                        global.clone(),
                        batch.valid.clone(),
                    )?);
                    patterns.push((dil, p.clone()));
                    p
                }
            };
            let h = self.norm(g, x, lp.ln1)?;
            let q = self.linear(g, h, lp.q)?;
            let k = self.linear(g, h, lp.k)?;
            let v = self.linear(g, h, lp.v)?;
            let gl = match lp.global {
                Some([gq, gk, gv]) => Some([self.linear(g, h, gq)?, self.linear(g, h, gk)?, self.linear(g, h, gv)?]),
                None => None,
            };
            let a = g.attention([q, k, v], gl, pattern)?;
            let o = self.linear(g, a, lp.o)?;
            x = g.add(x, o)?;
            let h = self.norm(g, x, lp.ln2)?;
            let u = self.linear(g, h, lp.ff1)?;
            let u = g.gelu(u);
            let f = self.linear(g, u, lp.ff2)?;
            x = g.add(x, f)?;
        }
        self.norm(g, x, self.layout.ln_f)
    }

    /// Records the MLM head and loss on top of [`Model::forward`]. Returns
    /// the loss and logits nodes and the labels in row order.
    pub fn forward_mlm(&self, g: &mut Graph<'_, T>, mb: &MaskedBatch) -> Result<(Var, Var, Vec<u32>)> {
        let rows: Vec<usize> = (0..mb.labels.len()).filter(|&i| mb.labels[i].is_some()).collect();
        if rows.is_empty() {
            return Err(ModelError::AllIgnored);
        }
        let labels: Vec<u32> = rows.iter().map(|&i| mb.labels[i].unwrap()).collect();
        if let Some(&id) = labels.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            });
        }
        let h = self.forward(g, &mb.batch)?;
        let hm = g.gather_rows(h, &rows)?;
        let tok = g.param(self.layout.tok);
        let bias = g.param(self.layout.head_bias);
        let logits = g.matmul_nt(hm, tok)?;
        let logits = g.add_row(logits, bias)?;
        let targets: Vec<Option<usize>> = labels.iter().map(|&l| Some(l as usize)).collect();
        let loss = g.cross_entropy(logits, &targets)?;
        Ok((loss, logits, labels))
    }

    /// Final hidden states, `batch * len` rows of `dims`.
    pub fn encode(&self, batch: &Batch) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let h = self.forward(&mut g, batch)?;
        Ok(g.value(h).to_vec())
    }

    /// Forward-only MLM evaluation.
    pub fn mlm(&self, mb: &MaskedBatch) -> Result<MlmOutput<T>> {
        let mut g = Graph::new(&self.params);
        let (loss, logits, labels) = self.forward_mlm(&mut g, mb)?;
        Ok(MlmOutput {
            loss: g.value(loss)[0],
            logits: g.value(logits).to_vec(),
            labels,
        })
    }

    /// MLM loss, predictions and parameter gradients.
    pub fn mlm_grads(&self, mb: &MaskedBatch) -> Result<(MlmOutput<T>, Gradients<T>)> {
        let mut g = Graph::new(&self.params);
        let (loss, logits, labels) = self.forward_mlm(&mut g, mb)?;
        let grads = g.backward(loss)?;
        let out = MlmOutput {
            loss: g.value(loss)[0],
            logits: g.value(logits).to_vec(),
            labels,
        };
        Ok((out, grads))
    }
}
