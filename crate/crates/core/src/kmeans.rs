//! Lloyd and mini-batch k-means over flat `f32` rows.
//!
//! Arithmetic is done in `f64`; centroids are narrowed to `f32` only when a
//! vocabulary is assembled.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KMeansMode {
    Lloyd,
    Minibatch,
}

impl std::str::FromStr for KMeansMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lloyd" => Ok(KMeansMode::Lloyd),
            "minibatch" => Ok(KMeansMode::Minibatch),
            other => Err(Error::InvalidConfig(format!("unknown k-means mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub vocab_size: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub mode: KMeansMode,
    /// Stop once the relative Frobenius shift of the centroids drops below this.
    pub tol: f64,
}

impl KMeansConfig {
    pub const DEFAULT_BATCH_SIZE: usize = 1024;
    pub const DEFAULT_MAX_ITERS: usize = 100;
    pub const DEFAULT_TOL: f64 = 1e-4;

    pub fn new(vocab_size: usize) -> Self {
        KMeansConfig {
            vocab_size,
            batch_size: Self::DEFAULT_BATCH_SIZE.max(vocab_size),
            max_iters: Self::DEFAULT_MAX_ITERS,
            seed: 0,
            mode: KMeansMode::Minibatch,
            tol: Self::DEFAULT_TOL,
        }
    }

    pub fn lloyd(vocab_size: usize) -> Self {
        KMeansConfig {
            mode: KMeansMode::Lloyd,
            ..Self::new(vocab_size)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidConfig(format!("tol {} is negative", self.tol)));
        }
        if self.mode == KMeansMode::Minibatch && self.batch_size < self.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} is smaller than vocab_size {}",
                self.batch_size, self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansReport {
    pub iterations: usize,
    pub converged: bool,
    /// Lloyd: objective after every assignment step, ending with the final
    /// centroids. Mini-batch: the full-data objective of the final centroids.
    pub objective_history: Vec<f64>,
}

pub(crate) struct Fitted {
    pub centroids: Vec<f64>,
    pub report: KMeansReport,
}

pub(crate) fn squared_distance(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

/// Index of the closest centroid and its squared distance; ties go to the
/// lower index.
pub(crate) fn nearest(point: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn count_distinct(rows: &[f32], dim: usize, cap: usize) -> usize {
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    for row in rows.chunks_exact(dim) {
        // -0.0 and 0.0 are the same patch
        seen.insert(row.iter().map(|v| (v + 0.0).to_bits()).collect());
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

/// k-means++ seeding restricted to `rows`.
fn plus_plus(rows: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows.len() / dim;
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(row(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(row(i), &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` a hair under `target`
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(row(pick).iter().map(|&v| v as f64));
        let c = &centroids[start..];
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(row(i), c));
        }
    }
    centroids
}

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_shift(old: &[f64], new: &[f64]) -> f64 {
    let diff: f64 = old
        .iter()
        .zip(new)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / frobenius(old).max(f64::MIN_POSITIVE)
}

fn has_converged(shift: f64, tol: f64) -> bool {
    shift == 0.0 || shift < tol
}

/// Moves each empty centroid onto the sample farthest from its own centroid,
/// never reusing a sample. `dists` pairs a row index with that distance.
fn reseed_empty(
    centroids: &mut [f64],
    empty: &[usize],
    mut dists: Vec<(usize, f64)>,
    rows: &[f32],
    dim: usize,
) {
    if empty.is_empty() {
        return;
    }
    dists.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (&c, &(i, _)) in empty.iter().zip(dists.iter()) {
        let src = &rows[i * dim..(i + 1) * dim];
        for (dst, &v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(src) {
            *dst = v as f64;
        }
    }
}

pub(crate) fn objective(rows: &[f32], dim: usize, centroids: &[f64]) -> f64 {
    rows.chunks_exact(dim)
        .map(|r| nearest(r, centroids, dim).1)
        .sum()
}

pub(crate) fn fit(rows: &[f32], dim: usize, cfg: &KMeansConfig) -> Result<Fitted> {
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let n = rows.len() / dim;
    let k = cfg.vocab_size;
    if n < k {
        return Err(Error::InsufficientPatches {
            available: n,
            requested: k,
        });
    }
    let distinct = count_distinct(rows, dim, k);
    if distinct < k {
        return Err(Error::InsufficientDistinct {
            distinct,
            requested: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.mode {
        KMeansMode::Lloyd => {
            let init = plus_plus(rows, dim, k, &mut rng);
            Ok(lloyd(rows, dim, init, cfg))
        }
        KMeansMode::Minibatch => {
            let block = (3 * cfg.batch_size).min(n);
            let mut init_rows = &rows[..block * dim];
            if count_distinct(init_rows, dim, k) < k {
                init_rows = rows;
            }
            let init = plus_plus(init_rows, dim, k, &mut rng);
            Ok(minibatch(rows, dim, init, cfg, &mut rng))
        }
    }
}

fn lloyd(rows: &[f32], dim: usize, mut centroids: Vec<f64>, cfg: &KMeansConfig) -> Fitted {
    let k = cfg.vocab_size;
    let n = rows.len() / dim;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];

    while iterations < cfg.max_iters {
        let mut total = 0.0;
        for (i, r) in rows.chunks_exact(dim).enumerate() {
            let (j, d) = nearest(r, &centroids, dim);
            labels[i] = j;
            dists[i] = d;
            total += d;
        }
        history.push(total);

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.chunks_exact(dim).enumerate() {
            let j = labels[i];
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(r) {
                *s += v as f64;
            }
        }
        let mut next = centroids.clone();
        let mut empty = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empty.push(j);
                continue;
            }
            let inv = counts[j] as f64;
            for (c, s) in next[j * dim..(j + 1) * dim]
                .iter_mut()
                .zip(&sums[j * dim..(j + 1) * dim])
            {
                *c = s / inv;
            }
        }
        reseed_empty(
            &mut next,
            &empty,
            dists.iter().copied().enumerate().collect(),
            rows,
            dim,
        );

        let shift = relative_shift(&centroids, &next);
        centroids = next;
        iterations += 1;
        if has_converged(shift, cfg.tol) {
            converged = true;
            break;
        }
    }
    history.push(objective(rows, dim, &centroids));

    Fitted {
        centroids,
        report: KMeansReport {
            iterations,
            converged,
            objective_history: history,
        },
    }
}

fn minibatch(
    rows: &[f32],
    dim: usize,
    mut centroids: Vec<f64>,
    cfg: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> Fitted {
    let k = cfg.vocab_size;
    let n = rows.len() / dim;
    let batch = cfg.batch_size.min(n);
    let mut counts = vec![0u64; k];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let mut picked = index::sample(rng, n, batch).into_vec();
        picked.sort_unstable();
        let assigned: Vec<(usize, usize, f64)> = picked
            .iter()
            .map(|&i| {
                let (j, d) = nearest(&rows[i * dim..(i + 1) * dim], &centroids, dim);
                (i, j, d)
            })
            .collect();

        let before = centroids.clone();
        for &(i, j, _) in &assigned {
            counts[j] += 1;
            let eta = 1.0 / counts[j] as f64;
            let x = &rows[i * dim..(i + 1) * dim];
            for (c, &v) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(x) {
                *c = (1.0 - eta) * *c + eta * v as f64;
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        reseed_empty(
            &mut centroids,
            &empty,
            assigned.iter().map(|&(i, _, d)| (i, d)).collect(),
            rows,
            dim,
        );

        let shift = relative_shift(&before, &centroids);
        iterations += 1;
        if has_converged(shift, cfg.tol) {
            converged = true;
            break;
        }
    }

    let history = vec![objective(rows, dim, &centroids)];
    Fitted {
        centroids,
        report: KMeansReport {
            iterations,
            converged,
            objective_history: history,
        },
    }
}
