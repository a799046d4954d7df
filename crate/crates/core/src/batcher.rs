//! Right-padding of variable-length token sequences into one batch.

use crate::encoder::{TokenSequence, MASK_VALUE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    dim: usize,
    max_len: usize,
    lengths: Vec<usize>,
    /// `B x Lmax x D`; padded rows are all zeros.
    embeddings: Vec<f32>,
    /// `B x Lmax`; `true` at real tokens.
    mask: Vec<bool>,
}

impl PaddedBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let stride = self.max_len * self.dim;
        &self.embeddings[i * stride..(i + 1) * stride]
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.max_len..(i + 1) * self.max_len]
    }

    /// `0` at real tokens and [`MASK_VALUE`] at padding, per key position.
    pub fn additive_mask(&self) -> Vec<f32> {
        self.mask
            .iter()
            .map(|&ok| if ok { 0.0 } else { MASK_VALUE })
            .collect()
    }

    pub fn valid_positions(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Strips padding, returning each sample's `length x D` embeddings.
    pub fn split(&self) -> Vec<Vec<f32>> {
        (0..self.batch_size())
            .map(|i| self.sample(i)[..self.lengths[i] * self.dim].to_vec())
            .collect()
    }
}

pub fn collate(seqs: &[TokenSequence]) -> Result<PaddedBatch> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Empty("cannot collate an empty batch".into()))?;
    let dim = first.dim();
    if let Some(bad) = seqs.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }
    let lengths: Vec<usize> = seqs.iter().map(TokenSequence::len).collect();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut embeddings = Vec::with_capacity(seqs.len() * max_len * dim);
    let mut mask = Vec::with_capacity(seqs.len() * max_len);
    for (seq, &len) in seqs.iter().zip(&lengths) {
        embeddings.extend_from_slice(seq.embeddings());
        embeddings.resize(embeddings.len() + (max_len - len) * dim, 0.0);
        mask.extend((0..max_len).map(|j| j < len));
    }
    Ok(PaddedBatch {
        dim,
        max_len,
        lengths,
        embeddings,
        mask,
    })
}
