//! A small randomly initialised ViT encoder used to exercise compression and
//! padding masks end to end.
//!
//! Weight matrices are row-major `in x out` and applied as `y = x W + b`.
//! Blocks are pre-norm: `x += attn(ln1(x))`, then `x += mlp(ln2(x))`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batcher::PaddedBatch;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::imagecore::PatchMatrix;
use crate::tokenizer::{GroupAssignment, PatchProjection};

pub const ENCODER_MAGIC: &[u8; 4] = b"VWTE";

/// Additive attention bias for padded keys. Large enough that `exp` underflows
/// to exactly zero in `f32`, finite so that no NaN can appear.
pub const MASK_VALUE: f32 = -1e9;

const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch_dim: usize,
    /// Positional table rows; `N + 1` for `N` patches.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            depth: 2,
            heads: 4,
            patch_dim: 768,
            max_tokens: 197,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.patch_dim == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidConfig(
                "patch_dim and max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Vec<f32>,
    pub ln1_beta: Vec<f32>,
    pub wq: Vec<f32>,
    pub bq: Vec<f32>,
    pub wk: Vec<f32>,
    pub bk: Vec<f32>,
    pub wv: Vec<f32>,
    pub bv: Vec<f32>,
    pub wo: Vec<f32>,
    pub bo: Vec<f32>,
    pub ln2_gamma: Vec<f32>,
    pub ln2_beta: Vec<f32>,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl LayerParams {
    fn random(d: usize, rng: &mut ChaCha8Rng, normal: &Normal<f32>) -> Self {
        let mut gauss = |n: usize| -> Vec<f32> { (0..n).map(|_| normal.sample(rng)).collect() };
        let hidden = d * MLP_RATIO;
        LayerParams {
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            wq: gauss(d * d),
            bq: vec![0.0; d],
            wk: gauss(d * d),
            bk: vec![0.0; d],
            wv: gauss(d * d),
            bv: vec![0.0; d],
            wo: gauss(d * d),
            bo: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            w1: gauss(d * hidden),
            b1: vec![0.0; hidden],
            w2: gauss(hidden * d),
            b2: vec![0.0; d],
        }
    }

    fn tensors(&self) -> [&Vec<f32>; 16] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f32>; 16] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn shapes(d: usize) -> [usize; 16] {
        let h = d * MLP_RATIO;
        [
            d,
            d,
            d * d,
            d,
            d * d,
            d,
            d * d,
            d,
            d * d,
            d,
            d,
            d,
            d * h,
            h,
            h * d,
            d,
        ]
    }

    fn zeroed(d: usize) -> Self {
        let s = Self::shapes(d);
        LayerParams {
            ln1_gamma: vec![0.0; s[0]],
            ln1_beta: vec![0.0; s[1]],
            wq: vec![0.0; s[2]],
            bq: vec![0.0; s[3]],
            wk: vec![0.0; s[4]],
            bk: vec![0.0; s[5]],
            wv: vec![0.0; s[6]],
            bv: vec![0.0; s[7]],
            wo: vec![0.0; s[8]],
            bo: vec![0.0; s[9]],
            ln2_gamma: vec![0.0; s[10]],
            ln2_beta: vec![0.0; s[11]],
            w1: vec![0.0; s[12]],
            b1: vec![0.0; s[13]],
            w2: vec![0.0; s[14]],
            b2: vec![0.0; s[15]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    /// `patch_dim x embed_dim`
    pub proj_w: Vec<f32>,
    pub proj_b: Vec<f32>,
    /// `max_tokens x embed_dim`; row 0 belongs to [CLS].
    pub pos: Vec<f32>,
    pub cls: Vec<f32>,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Gaussian weights (std 0.02), unit layer-norm gains, zero biases.
    pub fn random(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let gauss = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f32> {
            (0..n).map(|_| normal.sample(rng)).collect()
        };
        let proj_w = gauss(&mut rng, config.patch_dim * d);
        let pos = gauss(&mut rng, config.max_tokens * d);
        let cls = gauss(&mut rng, d);
        let layers = (0..config.depth)
            .map(|_| LayerParams::random(d, &mut rng, &normal))
            .collect();
        Ok(EncoderParams {
            config,
            proj_w,
            proj_b: vec![0.0; d],
            pos,
            cls,
            layers,
        })
    }

    /// All-zero weights of the right shapes, for hand-built fixtures.
    pub fn zeroed(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        Ok(EncoderParams {
            config,
            proj_w: vec![0.0; config.patch_dim * d],
            proj_b: vec![0.0; d],
            pos: vec![0.0; config.max_tokens * d],
            cls: vec![0.0; d],
            layers: (0..config.depth).map(|_| LayerParams::zeroed(d)).collect(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let d = c.embed_dim;
        let top = [
            (self.proj_w.len(), c.patch_dim * d),
            (self.proj_b.len(), d),
            (self.pos.len(), c.max_tokens * d),
            (self.cls.len(), d),
            (self.layers.len(), c.depth),
        ];
        let layer = self.layers.iter().flat_map(|l| {
            l.tensors()
                .into_iter()
                .zip(LayerParams::shapes(d))
                .map(|(t, s)| (t.len(), s))
        });
        for (found, expected) in top.into_iter().chain(layer) {
            if found != expected {
                return Err(Error::LengthMismatch { expected, found });
            }
        }
        Ok(())
    }

    fn all_tensors(&self) -> Vec<&Vec<f32>> {
        let mut out = vec![&self.proj_w, &self.proj_b, &self.pos, &self.cls];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = ByteWriter::with_magic(ENCODER_MAGIC);
        for v in [c.embed_dim, c.depth, c.heads, c.patch_dim, c.max_tokens] {
            w.u32(v as u32);
        }
        for t in self.all_tensors() {
            w.f32s(t);
        }
        w.string(&serde_json::to_string(c).expect("config serializes"));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::open(bytes, ENCODER_MAGIC)?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [embed_dim, depth, heads, patch_dim, max_tokens] = dims;
        let shell = EncoderConfig {
            embed_dim,
            depth,
            heads,
            patch_dim,
            max_tokens,
            seed: 0,
        };
        let mut params = EncoderParams::zeroed(shell)?;
        params.proj_w = r.f32s(patch_dim * embed_dim)?;
        params.proj_b = r.f32s(embed_dim)?;
        params.pos = r.f32s(max_tokens * embed_dim)?;
        params.cls = r.f32s(embed_dim)?;
        for layer in &mut params.layers {
            for t in layer.tensors_mut() {
                *t = r.f32s(t.len())?;
            }
        }
        let config: EncoderConfig = serde_json::from_str(&r.string()?)?;
        r.finish()?;
        if (EncoderConfig { seed: 0, ..config }) != shell {
            return Err(Error::Corrupt("encoder metadata disagrees with header".into()));
        }
        params.config = config;
        if params.all_tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Corrupt("encoder weights contain non-finite values".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        EncoderParams::from_bytes(&bytes)
    }
}

impl PatchProjection for EncoderParams {
    fn input_dim(&self) -> usize {
        self.config.patch_dim
    }

    fn output_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn project_rows(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let pd = self.config.patch_dim;
        if !rows.len().is_multiple_of(pd) {
            return Err(Error::DimensionMismatch {
                expected: pd,
                found: rows.len() % pd,
            });
        }
        Ok(linear(rows, pd, &self.proj_w, &self.proj_b, self.config.embed_dim))
    }
}

/// Where a token came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenSource {
    Cls,
    /// Source patch indices, ascending.
    Patches(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    dim: usize,
    embeddings: Vec<f32>,
    sources: Vec<TokenSource>,
}

impl TokenSequence {
    pub fn new(dim: usize, embeddings: Vec<f32>, sources: Vec<TokenSource>) -> Result<Self> {
        if embeddings.len() != dim * sources.len() {
            return Err(Error::LengthMismatch {
                expected: dim * sources.len(),
                found: embeddings.len(),
            });
        }
        if sources.first() != Some(&TokenSource::Cls)
            || sources[1..].contains(&TokenSource::Cls)
        {
            return Err(Error::InvalidConfig(
                "[CLS] must be token 0 and appear exactly once".into(),
            ));
        }
        Ok(TokenSequence {
            dim,
            embeddings,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sources(&self) -> &[TokenSource] {
        &self.sources
    }

    /// True for an uncompressed sequence: [CLS] followed by patches 0..N in order.
    pub fn is_full(&self) -> bool {
        self.sources[1..]
            .iter()
            .enumerate()
            .all(|(i, s)| matches!(s, TokenSource::Patches(m) if m.as_slice() == [i]))
    }
}

fn linear(x: &[f32], in_dim: usize, w: &[f32], b: &[f32], out_dim: usize) -> Vec<f32> {
    let rows = x.len() / in_dim;
    let mut y = Vec::with_capacity(rows * out_dim);
    for row in x.chunks_exact(in_dim) {
        let start = y.len();
        y.extend_from_slice(b);
        let out = &mut y[start..];
        for (&xi, wrow) in row.iter().zip(w.chunks_exact(out_dim)) {
            if xi == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    y
}

/// Projects every patch and adds positional rows; [CLS] is `cls + pos[0]`.
pub fn embed(patches: &PatchMatrix, params: &EncoderParams) -> Result<TokenSequence> {
    let c = params.config();
    if patches.patch_dim() != c.patch_dim {
        return Err(Error::DimensionMismatch {
            expected: c.patch_dim,
            found: patches.patch_dim(),
        });
    }
    let n = patches.n_patches();
    if n + 1 > c.max_tokens {
        return Err(Error::LengthMismatch {
            expected: c.max_tokens,
            found: n + 1,
        });
    }
    params.check_shapes()?;
    let d = c.embed_dim;
    let mut embeddings: Vec<f32> = params.cls.iter().zip(&params.pos[..d]).map(|(a, b)| a + b).collect();
    let projected = linear(patches.as_slice(), c.patch_dim, &params.proj_w, &params.proj_b, d);
    for (i, tok) in projected.chunks_exact(d).enumerate() {
        let pos = &params.pos[(i + 1) * d..(i + 2) * d];
        embeddings.extend(tok.iter().zip(pos).map(|(a, b)| a + b));
    }
    let sources = std::iter::once(TokenSource::Cls)
        .chain((0..n).map(|i| TokenSource::Patches(vec![i])))
        .collect();
    TokenSequence::new(d, embeddings, sources)
}

/// Applies an assignment to a full position-augmented sequence: dropped
/// patches vanish and each matched word's patches collapse into their
/// element-wise mean. [CLS] is copied unchanged.
pub fn compress(seq: &TokenSequence, assignment: &GroupAssignment) -> Result<TokenSequence> {
    let n = assignment.n_patches();
    if seq.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            found: seq.len(),
        });
    }
    if !seq.is_full() {
        return Err(Error::InvalidConfig(
            "compress expects an uncompressed sequence".into(),
        ));
    }
    let d = seq.dim;
    let groups = assignment.token_groups();
    let mut embeddings = Vec::with_capacity((groups.len() + 1) * d);
    embeddings.extend_from_slice(seq.token(0));
    let mut acc = vec![0.0f64; d];
    for members in &groups {
        if let [single] = members.as_slice() {
            embeddings.extend_from_slice(seq.token(single + 1));
            continue;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &p in members {
            for (a, &v) in acc.iter_mut().zip(seq.token(p + 1)) {
                *a += v as f64;
            }
        }
        let count = members.len() as f64;
        embeddings.extend(acc.iter().map(|&a| (a / count) as f32));
    }
    let sources = std::iter::once(TokenSource::Cls)
        .chain(groups.into_iter().map(TokenSource::Patches))
        .collect();
    TokenSequence::new(d, embeddings, sources)
}

fn layer_norm(x: &[f32], d: usize, gamma: &[f32], beta: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        out.extend(
            row.iter()
                .zip(gamma.iter().zip(beta))
                .map(|(v, (g, b))| (v - mean) * inv * g + b),
        );
    }
    out
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Multi-head self-attention over `x` (`len x d`). `valid[j] == false` adds
/// [`MASK_VALUE`] to every score against key `j`.
pub fn attention(x: &[f32], valid: &[bool], layer: &LayerParams, heads: usize) -> Vec<f32> {
    let len = valid.len();
    let d = x.len() / len.max(1);
    let dh = d / heads;
    let q = linear(x, d, &layer.wq, &layer.bq, d);
    let k = linear(x, d, &layer.wk, &layer.bk, d);
    let v = linear(x, d, &layer.wv, &layer.bv, d);
    let scale = 1.0 / (dh as f32).sqrt();
    let mut mixed = vec![0.0f32; len * d];
    let mut scores = vec![0.0f32; len];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..len {
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                let dot: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                *s = dot * scale + if valid[j] { 0.0 } else { MASK_VALUE };
            }
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let out = &mut mixed[i * d + off..i * d + off + dh];
            for (j, &w) in scores.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += w / total * vv;
                }
            }
        }
    }
    linear(&mixed, d, &layer.wo, &layer.bo, d)
}

fn block(x: &mut [f32], valid: &[bool], layer: &LayerParams, heads: usize, d: usize) {
    let normed = layer_norm(x, d, &layer.ln1_gamma, &layer.ln1_beta);
    let attn = attention(&normed, valid, layer, heads);
    x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);

    let normed = layer_norm(x, d, &layer.ln2_gamma, &layer.ln2_beta);
    let mut hidden = linear(&normed, d, &layer.w1, &layer.b1, d * MLP_RATIO);
    hidden.iter_mut().for_each(|h| *h = gelu(*h));
    let mlp = linear(&hidden, d * MLP_RATIO, &layer.w2, &layer.b2, d);
    x.iter_mut().zip(&mlp).for_each(|(a, b)| *a += b);

    for (row, &ok) in x.chunks_exact_mut(d).zip(valid) {
        if !ok {
            row.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Per sample, its `length x D` outputs with padding stripped.
    pub tokens: Vec<Vec<f32>>,
    /// Per sample, the output at the [CLS] position.
    pub pooled: Vec<Vec<f32>>,
}

pub fn forward(batch: &PaddedBatch, params: &EncoderParams) -> Result<EncoderOutput> {
    let d = params.embed_dim();
    if batch.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: batch.dim(),
        });
    }
    params.check_shapes()?;
    let heads = params.config().heads;
    let lmax = batch.max_len();
    let mut tokens = Vec::with_capacity(batch.batch_size());
    let mut pooled = Vec::with_capacity(batch.batch_size());
    for s in 0..batch.batch_size() {
        let valid = batch.mask_row(s);
        let mut x = batch.sample(s).to_vec();
        for (li, layer) in params.layers.iter().enumerate() {
            block(&mut x, valid, layer, heads, d);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: li });
            }
        }
        debug_assert_eq!(x.len(), lmax * d);
        let len = batch.lengths()[s];
        x.truncate(len * d);
        pooled.push(x[..d].to_vec());
        tokens.push(x);
    }
    Ok(EncoderOutput { tokens, pooled })
}
