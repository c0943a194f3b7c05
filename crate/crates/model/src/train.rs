//! Masked-language-model pretraining and evaluation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::ControlFlow;

use behavior_lm_core::vocab::TokenSequence;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint::CheckpointMeta;
use crate::encoder::Model;
use crate::error::{ModelError, Result};
use crate::masking::{mask_batch, window_sequences, Batch, MaskedBatch};
use crate::metrics::{correct_predictions, perplexity, Metrics, MetricsReport, RunMetrics};

/// Seed of the fixed evaluation masks.
pub const DEFAULT_EVAL_SEED: u64 = 0x00e7_a15e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            grad_accum: 4,
            adam: AdamConfig::default(),
            seed: 0,
            eval_seed: DEFAULT_EVAL_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: Metrics,
    pub heldout: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// Columns `epoch, split, ce, acc, ppl`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tsplit\tce\tacc\tppl\n");
        for e in &self.epochs {
            let rows = [("train", Some(e.train)), ("heldout", e.heldout)];
            for (split, m) in rows {
                if let Some(m) = m {
                    writeln!(out, "{}\t{split}\t{:.6}\t{:.6}\t{:.6}", e.epoch, m.ce, m.accuracy, m.perplexity).unwrap();
                }
            }
        }
        out
    }
}

/// Splits every document into blocks of at most `block` tokens; empty
/// documents contribute nothing.
pub fn blocks_from_docs(docs: &[TokenSequence], block: usize) -> Vec<Vec<u32>> {
    docs.iter().flat_map(|d| window_sequences(&d.ids, block)).collect()
}

/// Two-to-one train/test split by player, seeded.
pub fn split_by_player(docs: &[TokenSequence], seed: u64) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
    let mut players: Vec<&str> = docs.iter().map(|d| d.player_id.as_str()).collect();
    players.sort_unstable();
    players.dedup();
    players.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (2 * players.len()).div_ceil(3);
    let train: HashSet<&str> = players[..n_train].iter().copied().collect();
    docs.iter().cloned().partition(|d| train.contains(d.player_id.as_str()))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One optimizer update from the given micro-batches: gradients are
/// summed, divided by the number of micro-batches, then applied.
pub fn train_step(model: &mut Model<f32>, adam: &mut AdamState<f32>, micro: &[MaskedBatch]) -> Result<()> {
    if micro.is_empty() {
        return Ok(());
    }
    model.params.zero_grad();
    for mb in micro {
        let (_, grads) = model.mlm_grads(mb)?;
        model.params.accumulate(&grads)?;
    }
    model.params.scale_grad(1.0 / micro.len() as f32);
    adam.step(&mut model.params)?;
    model.params.zero_grad();
    Ok(())
}

/// Masked-LM metrics over `blocks` with masks drawn from `mask_seed`; the
/// same seed always yields the same masks.
pub fn evaluate_blocks(model: &Model<f32>, blocks: &[Vec<u32>], batch_size: usize, mask_seed: u64) -> Result<Metrics> {
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut masked = 0usize;
    let v = model.config.vocab_size;
    for (i, chunk) in blocks.chunks(batch_size.max(1)).enumerate() {
        let batch = Batch::pad(chunk)?;
        let mut rng = rng_for(mask_seed, i as u64);
        let mb = match mask_batch(&batch, v, model.config.mask_rate, &mut rng) {
            Ok(mb) => mb,
            Err(ModelError::NothingToMask) => continue,
            Err(e) => return Err(e),
        };
        let out = model.mlm(&mb)?;
        let n = out.labels.len();
        loss_sum += out.loss as f64 * n as f64;
        correct += correct_predictions(&out.logits, v, &out.labels);
        masked += n;
    }
    Metrics::from_totals(loss_sum, correct, masked)
}

/// Trains `model` in place. `on_epoch` runs after every epoch (for
/// checkpointing) with the epoch's log entry; returning `Break` ends
/// training after that epoch.
pub fn train(
    model: &mut Model<f32>,
    train_blocks: &[Vec<u32>],
    heldout_blocks: &[Vec<u32>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model<f32>, &EpochLog) -> Result<ControlFlow<()>>,
) -> Result<TrainLog> {
    if cfg.batch_size == 0 || cfg.grad_accum == 0 {
        return Err(ModelError::Invalid("batch size and accumulation steps must be positive".into()));
    }
    if train_blocks.len() < cfg.batch_size {
        return Err(ModelError::SmallCorpus {
            blocks: train_blocks.len(),
            batch: cfg.batch_size,
        });
    }
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let mut log = TrainLog::default();
    let v = model.config.vocab_size;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_blocks.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, 2 * epoch as u64));
        let mut mask_rng = rng_for(cfg.seed, 2 * epoch as u64 + 1);
        let mut pending = Vec::with_capacity(cfg.grad_accum);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| train_blocks[i].as_slice()).collect();
            let batch = Batch::pad(&seqs)?;
            match mask_batch(&batch, v, model.config.mask_rate, &mut mask_rng) {
                Ok(mb) => pending.push(mb),
                Err(ModelError::NothingToMask) => continue,
                Err(e) => return Err(e),
            }
            if pending.len() == cfg.grad_accum {
                train_step(model, &mut adam, &pending)?;
                pending.clear();
            }
        }
        train_step(model, &mut adam, &pending)?;

        let train = evaluate_blocks(model, train_blocks, cfg.batch_size, cfg.eval_seed)?;
        let heldout = if heldout_blocks.is_empty() {
            None
        } else {
            Some(evaluate_blocks(model, heldout_blocks, cfg.batch_size, cfg.eval_seed)?)
        };
        let entry = EpochLog { epoch, train, heldout };
        let flow = on_epoch(model, &entry)?;
        log.epochs.push(entry);
        if flow.is_break() {
            break;
        }
    }
    Ok(log)
}

/// Evaluates one trained model per run on held-out documents. Fails when a
/// held-out player was part of any run's training split.
pub fn evaluate(
    runs: &[(String, &Model<f32>, &CheckpointMeta)],
    test_docs: &[TokenSequence],
    batch_size: usize,
    eval_seed: u64,
) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(runs.len());
    for (name, model, meta) in runs {
        let trained: HashSet<&str> = meta.train_players.iter().map(String::as_str).collect();
        if let Some(d) = test_docs.iter().find(|d| trained.contains(d.player_id.as_str())) {
            return Err(ModelError::Overlap(d.player_id.clone()));
        }
        let blocks = blocks_from_docs(test_docs, model.config.block_size);
        let m = evaluate_blocks(model, &blocks, batch_size, eval_seed)?;
        rows.push(RunMetrics {
            run: name.clone(),
            ce: m.ce,
            accuracy: m.accuracy,
            perplexity: perplexity(m.ce),
        });
    }
    MetricsReport::from_runs(rows)
}
