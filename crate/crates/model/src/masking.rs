//! Blocking, padding and masked-language-model corruption.

use behavior_lm_core::vocab::{MASK, NUM_SPECIALS, PAD, SEP};
use rand::Rng;

use crate::error::{ModelError, Result};

/// Maximum number of masking draws before a batch is rejected.
pub const MAX_MASK_DRAWS: usize = 64;

/// Splits a token sequence into consecutive blocks of at most `block` ids.
pub fn window_sequences(ids: &[u32], block: usize) -> Vec<Vec<u32>> {
    assert!(block > 0, "block size must be positive");
    ids.chunks(block).map(<[u32]>::to_vec).collect()
}

/// Right-padded batch of token sequences, `batch * len` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<u32>,
    pub valid: Vec<bool>,
}

impl Batch {
    /// Pads to the longest sequence with PAD.
    pub fn pad<S: AsRef<[u32]>>(seqs: &[S]) -> Result<Self> {
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        if len == 0 {
            return Err(ModelError::Invalid("batch has no tokens".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut valid = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = s.as_ref();
            if s.contains(&PAD) {
                return Err(ModelError::Invalid("sequence contains the padding id".into()));
            }
            ids.extend_from_slice(s);
            ids.resize(ids.len() + len - s.len(), PAD);
            valid.extend((0..len).map(|i| i < s.len()));
        }
        Ok(Self {
            batch: seqs.len(),
            len,
            ids,
            valid,
        })
    }

    /// Global positions: the first token of every sequence and every
    /// session marker.
    pub fn global_flags(&self) -> Vec<bool> {
        (0..self.ids.len())
            .map(|i| self.valid[i] && (i % self.len == 0 || self.ids[i] == SEP))
            .collect()
    }

    pub fn tokens(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Batch with MLM corruption applied; `labels` hold the original id
/// exactly at the selected positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub batch: Batch,
    pub labels: Vec<Option<u32>>,
}

impl MaskedBatch {
    pub fn masked_positions(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Selects every non-special, non-padding position independently with
/// probability `rate`. Selected positions become MASK 80% of the time, a
/// random ordinary word 10% of the time, and stay unchanged otherwise.
/// Draws with no selection are rejected and redrawn.
pub fn mask_batch(batch: &Batch, vocab_size: usize, rate: f64, rng: &mut impl Rng) -> Result<MaskedBatch> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(ModelError::MaskRate(rate));
    }
    let eligible = |i: usize| batch.valid[i] && batch.ids[i] as usize >= NUM_SPECIALS;
    if !(0..batch.ids.len()).any(eligible) {
        return Err(ModelError::NothingToMask);
    }
    for _ in 0..MAX_MASK_DRAWS {
        let mut ids = batch.ids.clone();
        let mut labels = vec![None; ids.len()];
        let mut selected = 0;
        for i in 0..ids.len() {
            if !eligible(i) || !rng.random_bool(rate) {
                continue;
            }
            selected += 1;
            labels[i] = Some(ids[i]);
            let r: f64 = rng.random();
            if r < 0.8 {
                ids[i] = MASK;
            } else if r < 0.9 {
                ids[i] = rng.random_range(NUM_SPECIALS as u32..vocab_size as u32);
            }
        }
        if selected > 0 {
            return Ok(MaskedBatch {
                batch: Batch {
                    ids,
                    ..batch.clone()
                },
                labels,
            });
        }
    }
    Err(ModelError::EmptyMask(MAX_MASK_DRAWS))
}
