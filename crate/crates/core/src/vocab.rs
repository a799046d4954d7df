//! The bag of visual words: k-means centroids over flattened patches, their
//! on-disk container, and nearest-word lookup.

use std::borrow::Borrow;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::imagecore::PatchMatrix;
use crate::kmeans::{self, KMeansConfig, KMeansReport};

pub const VOCAB_MAGIC: &[u8; 4] = b"VWTV";

/// Bytes before the centroid payload: magic, version, space, patch size,
/// patch dim, vocab size.
pub const VOCAB_HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabSpace {
    Pixel,
    Embedding,
}

impl VocabSpace {
    fn tag(self) -> u8 {
        match self {
            VocabSpace::Pixel => 0,
            VocabSpace::Embedding => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(VocabSpace::Pixel),
            1 => Ok(VocabSpace::Embedding),
            other => Err(Error::Corrupt(format!("unknown vocabulary space tag {other}"))),
        }
    }
}

impl fmt::Display for VocabSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabSpace::Pixel => "pixel",
            VocabSpace::Embedding => "embedding",
        })
    }
}

/// Provenance carried in the container's trailing metadata string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabMetadata {
    pub corpus: String,
    pub seed: u64,
    pub iterations: usize,
    /// Value range the patches were clustered in.
    pub pixel_range: String,
}

impl VocabMetadata {
    pub fn new(corpus: impl Into<String>, seed: u64, iterations: usize) -> Self {
        VocabMetadata {
            corpus: corpus.into(),
            seed,
            iterations,
            pixel_range: "[0,1]".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    patch_size: usize,
    patch_dim: usize,
    space: VocabSpace,
    centroids: Vec<f32>,
    metadata: VocabMetadata,
}

impl Vocabulary {
    pub fn new(
        patch_size: usize,
        patch_dim: usize,
        space: VocabSpace,
        centroids: Vec<f32>,
        metadata: VocabMetadata,
    ) -> Result<Self> {
        if patch_dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(patch_dim) {
            return Err(Error::DimensionMismatch {
                expected: patch_dim,
                found: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt("vocabulary contains non-finite values".into()));
        }
        Ok(Vocabulary {
            patch_size,
            patch_dim,
            space,
            centroids,
            metadata,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.centroids.len() / self.patch_dim
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn space(&self) -> VocabSpace {
        self.space
    }

    pub fn metadata(&self) -> &VocabMetadata {
        &self.metadata
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, w: usize) -> &[f32] {
        &self.centroids[w * self.patch_dim..(w + 1) * self.patch_dim]
    }

    pub fn words(&self) -> std::slice::ChunksExact<'_, f32> {
        self.centroids.chunks_exact(self.patch_dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_magic(VOCAB_MAGIC);
        w.u8(self.space.tag());
        w.u32(self.patch_size as u32);
        w.u32(self.patch_dim as u32);
        w.u32(self.vocab_size() as u32);
        w.f32s(&self.centroids);
        w.string(&serde_json::to_string(&self.metadata).expect("metadata serializes"));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, VOCAB_MAGIC)?;
        let space = VocabSpace::from_tag(r.u8()?)?;
        let patch_size = r.u32()? as usize;
        let patch_dim = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let count = patch_dim
            .checked_mul(vocab_size)
            .ok_or_else(|| Error::Corrupt("vocabulary dimensions overflow".into()))?;
        let centroids = r.f32s(count)?;
        let metadata: VocabMetadata = serde_json::from_str(&r.string()?)?;
        r.finish()?;
        Vocabulary::new(patch_size, patch_dim, space, centroids, metadata)
    }
}

pub fn save_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, vocab.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::from_bytes(&bytes)
}

/// Concatenates a corpus of patch matrices, checking they agree on geometry.
pub(crate) fn flatten_corpus<I>(corpus: I) -> Result<(usize, usize, Vec<f32>)>
where
    I: IntoIterator,
    I::Item: Borrow<PatchMatrix>,
{
    let mut geometry: Option<(usize, usize)> = None;
    let mut rows = Vec::new();
    for pm in corpus {
        let pm = pm.borrow();
        let g = (pm.patch_size(), pm.patch_dim());
        match geometry {
            None => geometry = Some(g),
            Some((_, dim)) if dim != g.1 => {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: g.1,
                })
            }
            Some(_) => {}
        }
        rows.extend_from_slice(pm.as_slice());
    }
    let (patch_size, dim) = geometry.ok_or_else(|| Error::Empty("corpus has no images".into()))?;
    Ok((patch_size, dim, rows))
}

pub(crate) fn fit_vocabulary(
    rows: &[f32],
    patch_size: usize,
    dim: usize,
    space: VocabSpace,
    cfg: &KMeansConfig,
    corpus_name: &str,
) -> Result<(Vocabulary, KMeansReport)> {
    let fitted = kmeans::fit(rows, dim, cfg)?;
    let centroids = fitted.centroids.iter().map(|&v| v as f32).collect();
    let metadata = VocabMetadata::new(corpus_name, cfg.seed, fitted.report.iterations);
    let vocab = Vocabulary::new(patch_size, dim, space, centroids, metadata)?;
    Ok((vocab, fitted.report))
}

/// Clusters every patch of the corpus into `cfg.vocab_size` pixel-space words.
pub fn build_vocab<I>(corpus: I, cfg: &KMeansConfig, corpus_name: &str) -> Result<Vocabulary>
where
    I: IntoIterator,
    I::Item: Borrow<PatchMatrix>,
{
    build_vocab_with_report(corpus, cfg, corpus_name).map(|(v, _)| v)
}

pub fn build_vocab_with_report<I>(
    corpus: I,
    cfg: &KMeansConfig,
    corpus_name: &str,
) -> Result<(Vocabulary, KMeansReport)>
where
    I: IntoIterator,
    I::Item: Borrow<PatchMatrix>,
{
    let (patch_size, dim, rows) = flatten_corpus(corpus)?;
    fit_vocabulary(&rows, patch_size, dim, VocabSpace::Pixel, cfg, corpus_name)
}

/// Euclidean nearest word for every row of `rows` (`dim` values each).
pub fn assign_nearest_rows(rows: &[f32], dim: usize, vocab: &Vocabulary) -> Result<Vec<usize>> {
    if dim != vocab.patch_dim() {
        return Err(Error::DimensionMismatch {
            expected: vocab.patch_dim(),
            found: dim,
        });
    }
    let centroids: Vec<f64> = vocab.centroids.iter().map(|&v| v as f64).collect();
    Ok(rows
        .chunks_exact(dim)
        .map(|r| kmeans::nearest(r, &centroids, dim).0)
        .collect())
}

pub fn assign_nearest(patches: &PatchMatrix, vocab: &Vocabulary) -> Result<Vec<usize>> {
    assign_nearest_rows(patches.as_slice(), patches.patch_dim(), vocab)
}
