//! Max-pooled sequence embeddings from the encoder's final hidden states.

use std::collections::HashMap;

use behavior_lm_model::{Batch, Model};

use crate::error::{check_finite, AnalysisError, Result};

/// One embedding per row, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub dims: usize,
    pub data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    /// Averages rows that share an id; output follows first appearance.
    pub fn mean_by_id(&self) -> EmbeddingMatrix {
        let mut order: Vec<String> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut sums: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for (i, id) in self.ids.iter().enumerate() {
            let s = *slot.entry(id).or_insert_with(|| {
                order.push(id.clone());
                sums.push(vec![0.0; self.dims]);
                counts.push(0);
                order.len() - 1
            });
            for (a, b) in sums[s].iter_mut().zip(self.row(i)) {
                *a += b;
            }
            counts[s] += 1;
        }
        let data = sums
            .into_iter()
            .zip(counts)
            .flat_map(|(row, n)| row.into_iter().map(move |v| v / n as f64))
            .collect();
        EmbeddingMatrix {
            ids: order,
            dims: self.dims,
            data,
        }
    }

    /// Binary form: `rows` and `dims` as little-endian u64, then the
    /// row-major values as little-endian f32. Keys are stored separately.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend((self.rows() as u64).to_le_bytes());
        out.extend((self.dims as u64).to_le_bytes());
        for v in &self.data {
            out.extend((*v as f32).to_le_bytes());
        }
        out
    }

    /// Sidecar key list, one id per line in row order.
    pub fn keys_text(&self) -> String {
        let mut out = String::new();
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], keys: &str) -> Result<Self> {
        let header = |i: usize| -> Result<usize> {
            let b = bytes
                .get(8 * i..8 * i + 8)
                .ok_or_else(|| AnalysisError::Shape("truncated embedding header".into()))?;
            Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")) as usize)
        };
        let (rows, dims) = (header(0)?, header(1)?);
        let payload = &bytes[16..];
        if rows.checked_mul(dims).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
            return Err(AnalysisError::Shape(format!(
                "{rows}x{dims} header but {} payload bytes",
                payload.len()
            )));
        }
        let ids: Vec<String> = keys.lines().map(str::to_string).collect();
        if ids.len() != rows {
            return Err(AnalysisError::Shape(format!("{} keys for {rows} rows", ids.len())));
        }
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        check_finite(&data, "embedding file")?;
        Ok(Self { ids, dims, data })
    }
}

/// Elementwise maximum over the valid rows of one sequence's hidden
/// states (`len x dims`).
pub fn max_pool(hidden: &[f32], dims: usize, valid: &[bool]) -> Option<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for (row, _) in hidden.chunks(dims).zip(valid).filter(|(_, &v)| v) {
        match &mut out {
            None => out = Some(row.iter().map(|&x| x as f64).collect()),
            Some(acc) => {
                for (a, &x) in acc.iter_mut().zip(row) {
                    *a = a.max(x as f64);
                }
            }
        }
    }
    out
}

/// Embeds every sequence by max-pooling the final hidden states over its
/// positions.
pub fn embed<S: AsRef<[u32]>>(model: &Model<f32>, ids: &[String], seqs: &[S], batch_size: usize) -> Result<EmbeddingMatrix> {
    if ids.len() != seqs.len() {
        return Err(AnalysisError::Shape(format!("{} ids for {} sequences", ids.len(), seqs.len())));
    }
    if let Some(i) = seqs.iter().position(|s| s.as_ref().is_empty()) {
        return Err(AnalysisError::EmptySequence(i));
    }
    let dims = model.config.dims;
    let mut data = Vec::with_capacity(seqs.len() * dims);
    for chunk in seqs.chunks(batch_size.max(1)) {
        let batch = Batch::pad(chunk)?;
        let hidden = model.encode(&batch)?;
        let stride = batch.len * dims;
        for b in 0..batch.batch {
            let valid = &batch.valid[b * batch.len..(b + 1) * batch.len];
            let pooled = max_pool(&hidden[b * stride..(b + 1) * stride], dims, valid).expect("sequence is non-empty");
            data.extend(pooled);
        }
    }
    check_finite(&data, "embeddings")?;
    Ok(EmbeddingMatrix {
        ids: ids.to_vec(),
        dims,
        data,
    })
}
