//! Brute-force oracles and fixture generators shared by the integration
//! tests. Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vwt::imagecore::{Image, PatchMatrix};
use vwt::tokenizer::Verdict;
use vwt::vocab::{VocabMetadata, VocabSpace, Vocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    (0..n * dim).map(|_| rng.random::<f32>()).collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::new(h, w, c, random_vectors(rng, h * w, c)).unwrap()
}

pub fn pixel_vocab(patch_size: usize, dim: usize, centroids: Vec<f32>) -> Vocabulary {
    Vocabulary::new(
        patch_size,
        dim,
        VocabSpace::Pixel,
        centroids,
        VocabMetadata::new("fixture", 0, 0),
    )
    .unwrap()
}

/// `1 - a.b / (|a| |b|)` by a plain double loop; `None` when either norm is 0.
pub fn cosine_oracle(a: &[f32], b: &[f32]) -> Option<f64> {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

/// Exhaustive verdicts: closest word by the oracle distance, lowest index on
/// ties, matched iff within the threshold.
pub fn inter_oracle(patches: &PatchMatrix, vocab: &Vocabulary, t: f64) -> Vec<Verdict> {
    let mut out = Vec::new();
    for p in 0..patches.n_patches() {
        let mut best: Option<(usize, f64)> = None;
        for w in 0..vocab.vocab_size() {
            if let Some(d) = cosine_oracle(patches.row(p), vocab.centroid(w)) {
                match best {
                    Some((_, b)) if d >= b => {}
                    _ => best = Some((w, d)),
                }
            }
        }
        out.push(match best {
            Some((w, d)) if d <= t => Verdict::Matched(w),
            _ => Verdict::Intact,
        });
    }
    out
}

pub fn euclid_table(patches: &[f32], centroids: &[f32], dim: usize) -> Vec<Vec<f64>> {
    patches
        .chunks(dim)
        .map(|p| {
            centroids
                .chunks(dim)
                .map(|c| {
                    let mut s = 0.0f64;
                    for i in 0..dim {
                        let d = p[i] as f64 - c[i] as f64;
                        s += d * d;
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn argmin_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] < row[best] {
            best = i;
        }
    }
    best
}

pub fn two_pass_variance(row: &[f32]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
    row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Group-by-word then mean, in f64, over token rows `1..=N` of a full
/// sequence. Returns token rows in first-appearance order, [CLS] excluded.
pub fn group_mean_oracle(full: &[f32], dim: usize, verdicts: &[Verdict]) -> Vec<Vec<f64>> {
    let mut order: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut by_word: BTreeMap<usize, usize> = BTreeMap::new();
    for (p, v) in verdicts.iter().enumerate() {
        match v {
            Verdict::Dropped => {}
            Verdict::Intact => order.push((p, vec![p])),
            Verdict::Matched(w) => {
                if let Some(&slot) = by_word.get(w) {
                    order[slot].1.push(p);
                } else {
                    by_word.insert(*w, order.len());
                    order.push((p, vec![p]));
                }
            }
        }
    }
    order.sort_by_key(|(first, _)| *first);
    order
        .into_iter()
        .map(|(_, members)| {
            let mut acc = vec![0.0f64; dim];
            for &p in &members {
                for k in 0..dim {
                    acc[k] += full[(p + 1) * dim + k] as f64;
                }
            }
            acc.iter().map(|a| a / members.len() as f64).collect()
        })
        .collect()
}

/// Three tight blobs in `dim` dimensions. Blob `b` is centered at
/// `0.1 + 0.35 b` in every coordinate and jittered uniformly by `spread`.
/// Returns (rows in round-robin blob order, per-blob sample means).
pub fn three_blobs(
    rng: &mut ChaCha8Rng,
    per_blob: usize,
    dim: usize,
    spread: f32,
) -> (Vec<f32>, Vec<Vec<f64>>) {
    let mut rows = Vec::new();
    let mut means = vec![vec![0.0f64; dim]; 3];
    for i in 0..per_blob * 3 {
        let b = i % 3;
        for m in means[b].iter_mut() {
            let v = 0.1 + 0.35 * b as f32 + spread * (rng.random::<f32>() - 0.5);
            rows.push(v);
            *m += v as f64 / per_blob as f64;
        }
    }
    (rows, means)
}

/// Distance between neighbouring blob centers of [`three_blobs`].
pub fn blob_separation(dim: usize) -> f64 {
    0.35 * (dim as f64).sqrt()
}

/// An 8x8-patch RGB image (8 x 12 blocks) where two of every three blocks
/// are light perturbations of a vocabulary word and the rest are noise,
/// together with that vocabulary.
pub fn overlay_fixture(seed: u64) -> (Image, Vocabulary) {
    let mut rng = rng(500 + seed);
    let words = random_vectors(&mut rng, 12, 192);
    let mut rows = random_vectors(&mut rng, 96, 192);
    for (i, row) in rows.chunks_mut(192).enumerate() {
        if i % 3 != 0 {
            let w = (i * 7 + seed as usize) % 12;
            for (dst, src) in row.iter_mut().zip(&words[w * 192..]) {
                *dst = (src + 0.02 * (*dst - 0.5)).clamp(0.0, 1.0);
            }
        }
    }
    let img = PatchMatrix::from_rows(8, 3, (8, 12), rows).unwrap().unpatchify().unwrap();
    (img, pixel_vocab(8, 192, words))
}

/// Reads an overlay back and groups patches by their flat color; non-uniform
/// patches are intact.
pub fn reingest(path: &std::path::Path, p: usize) -> Vec<Option<Vec<u32>>> {
    let pm = vwt::imagecore::patchify(&vwt::imagecore::load_image(path).unwrap(), p).unwrap();
    pm.rows()
        .map(|r| {
            let first = &r[..3];
            r.chunks(3)
                .all(|px| px == first)
                .then(|| first.iter().map(|v| v.to_bits()).collect())
        })
        .collect()
}

/// True when two verdict-style labelings induce the same partition of patches.
pub fn same_partition<A: Ord + Clone, B: Ord + Clone>(a: &[Option<A>], b: &[Option<B>]) -> bool {
    let mut ab: BTreeMap<A, B> = BTreeMap::new();
    let mut ba: BTreeMap<B, A> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *ab.entry(x.clone()).or_insert_with(|| y.clone()) != *y
                    || *ba.entry(y.clone()).or_insert_with(|| x.clone()) != *x
                {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}
