//! Patch grouping: per-patch verdicts that decide which tokens survive,
//! which get merged into a visual word, and which get dropped.
//!
//! Two families exist. The intra-image family drops the lowest-variance
//! patches of a single image. The inter-image family matches every patch to
//! its closest visual word by cosine distance and merges patches that share a
//! word, provided the distance is within the threshold.

use std::borrow::Borrow;
use std::collections::BTreeSet;
use std::fmt;

use rand::distr::{Distribution, Uniform};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::PatchMatrix;
use crate::kmeans::KMeansConfig;
use crate::vocab::{self, VocabSpace, Vocabulary};

/// Default matching threshold on cosine distance.
pub const DEFAULT_THRESHOLD: f64 = 0.1;
/// Default fraction of patches dropped by the intra-image approach.
pub const DEFAULT_DROP_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Matched(usize),
    Intact,
    Dropped,
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Verdict::Matched(w) => {
                let mut map = s.serialize_map(Some(1))?;
                map.serialize_entry("m", w)?;
                map.end()
            }
            Verdict::Intact => s.serialize_str("i"),
            Verdict::Dropped => s.serialize_str("d"),
        }
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Tag(String),
            Word { m: usize },
        }
        match Repr::deserialize(d)? {
            Repr::Word { m } => Ok(Verdict::Matched(m)),
            Repr::Tag(t) if t == "i" => Ok(Verdict::Intact),
            Repr::Tag(t) if t == "d" => Ok(Verdict::Dropped),
            Repr::Tag(t) => Err(de::Error::custom(format!("unknown verdict {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    Intra,
    Inter,
    RandomInter,
    RandomIntra,
    InterEmbed,
}

impl TokenizeMode {
    pub fn is_intra_family(self) -> bool {
        matches!(self, TokenizeMode::Intra | TokenizeMode::RandomIntra)
    }

    pub fn is_inter_family(self) -> bool {
        !self.is_intra_family()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TokenizeMode::Intra => "intra",
            TokenizeMode::Inter => "inter",
            TokenizeMode::RandomInter => "random_inter",
            TokenizeMode::RandomIntra => "random_intra",
            TokenizeMode::InterEmbed => "inter_embed",
        }
    }
}

impl fmt::Display for TokenizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TokenizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "intra" => Ok(TokenizeMode::Intra),
            "inter" => Ok(TokenizeMode::Inter),
            "random_inter" => Ok(TokenizeMode::RandomInter),
            "random_intra" => Ok(TokenizeMode::RandomIntra),
            "inter_embed" => Ok(TokenizeMode::InterEmbed),
            _ => Err(Error::InvalidConfig(format!("unknown tokenizer mode {s:?}"))),
        }
    }
}

/// Per-patch verdicts for one image. [CLS] is implicit and never grouped.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    mode: TokenizeMode,
    threshold: Option<f64>,
    verdicts: Vec<Verdict>,
}

impl GroupAssignment {
    pub fn new(mode: TokenizeMode, threshold: Option<f64>, verdicts: Vec<Verdict>) -> Result<Self> {
        let bad = verdicts.iter().find(|v| match v {
            Verdict::Dropped => mode.is_inter_family(),
            Verdict::Matched(_) => mode.is_intra_family(),
            Verdict::Intact => false,
        });
        if let Some(v) = bad {
            return Err(Error::ModeMismatch(format!("{v:?} verdict in {mode} assignment")));
        }
        Ok(GroupAssignment {
            mode,
            threshold,
            verdicts,
        })
    }

    pub fn mode(&self) -> TokenizeMode {
        self.mode
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn n_patches(&self) -> usize {
        self.verdicts.len()
    }

    pub fn matched_words(&self) -> BTreeSet<usize> {
        self.verdicts
            .iter()
            .filter_map(|v| match v {
                Verdict::Matched(w) => Some(*w),
                _ => None,
            })
            .collect()
    }

    pub fn intact_count(&self) -> usize {
        self.count(|v| *v == Verdict::Intact)
    }

    pub fn dropped_count(&self) -> usize {
        self.count(|v| *v == Verdict::Dropped)
    }

    pub fn matched_count(&self) -> usize {
        self.count(|v| matches!(v, Verdict::Matched(_)))
    }

    fn count(&self, pred: impl Fn(&Verdict) -> bool) -> usize {
        self.verdicts.iter().filter(|v| pred(v)).count()
    }

    /// Sequence length after compression, [CLS] included.
    pub fn compressed_length(&self) -> usize {
        self.matched_words().len() + self.intact_count() + 1
    }

    /// Source patches of every surviving non-[CLS] token, ordered by each
    /// token's smallest member index.
    pub fn token_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot_of_word: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        for (p, v) in self.verdicts.iter().enumerate() {
            match v {
                Verdict::Dropped => {}
                Verdict::Intact => groups.push(vec![p]),
                Verdict::Matched(w) => match slot_of_word.get(w) {
                    Some(&slot) => groups[slot].push(p),
                    None => {
                        slot_of_word.insert(*w, groups.len());
                        groups.push(vec![p]);
                    }
                },
            }
        }
        groups
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct AssignmentRecord {
    mode: TokenizeMode,
    threshold: Option<f64>,
    n_patches: usize,
    verdicts: Vec<Verdict>,
    compressed_length: usize,
}

impl Serialize for GroupAssignment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AssignmentRecord {
            mode: self.mode,
            threshold: self.threshold,
            n_patches: self.n_patches(),
            verdicts: self.verdicts.clone(),
            compressed_length: self.compressed_length(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupAssignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = AssignmentRecord::deserialize(d)?;
        if rec.n_patches != rec.verdicts.len() {
            return Err(de::Error::custom(format!(
                "n_patches {} but {} verdicts",
                rec.n_patches,
                rec.verdicts.len()
            )));
        }
        let a = GroupAssignment::new(rec.mode, rec.threshold, rec.verdicts)
            .map_err(de::Error::custom)?;
        if a.compressed_length() != rec.compressed_length {
            return Err(de::Error::custom(format!(
                "compressed_length {} disagrees with verdicts ({})",
                rec.compressed_length,
                a.compressed_length()
            )));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraConfig {
    drop_ratio: f64,
}

impl IntraConfig {
    pub fn new(drop_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_ratio) {
            return Err(Error::InvalidConfig(format!(
                "drop ratio {drop_ratio} outside [0, 1]"
            )));
        }
        Ok(IntraConfig { drop_ratio })
    }

    pub fn drop_ratio(&self) -> f64 {
        self.drop_ratio
    }
}

impl Default for IntraConfig {
    fn default() -> Self {
        IntraConfig {
            drop_ratio: DEFAULT_DROP_RATIO,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InterConfig<'a> {
    threshold: f64,
    vocab: &'a Vocabulary,
}

impl<'a> InterConfig<'a> {
    pub fn new(threshold: f64, vocab: &'a Vocabulary) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(InterConfig { threshold, vocab })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn vocab(&self) -> &'a Vocabulary {
        self.vocab
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside [0, 2]")));
    }
    Ok(())
}

/// Number of patches dropped at `ratio`: the ceiling of `ratio * n`, where
/// products within 1e-9 of an integer count as that integer (0.7 * 10 is 7,
/// not 8).
pub fn drop_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k.max(0.0) as usize).min(n)
}

/// Population variance of each patch (mean of squared deviations over all
/// `P*P*C` values).
pub fn patch_variance(patches: &PatchMatrix) -> Vec<f64> {
    patches
        .rows()
        .map(|row| {
            // Welford
            let mut mean = 0.0f64;
            let mut m2 = 0.0f64;
            for (i, &v) in row.iter().enumerate() {
                let v = v as f64;
                let delta = v - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (v - mean);
            }
            (m2 / row.len() as f64).max(0.0)
        })
        .collect()
}

/// Drops the `ceil(ratio * N)` lowest-variance patches; ties drop the lower
/// index first.
pub fn tokenize_intra(patches: &PatchMatrix, cfg: &IntraConfig) -> GroupAssignment {
    let variance = patch_variance(patches);
    let n = variance.len();
    let k = drop_count(cfg.drop_ratio, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| variance[a].total_cmp(&variance[b]).then(a.cmp(&b)));
    let mut verdicts = vec![Verdict::Intact; n];
    for &p in &order[..k] {
        verdicts[p] = Verdict::Dropped;
    }
    GroupAssignment::new(TokenizeMode::Intra, None, verdicts).expect("intra verdicts")
}

/// Drops `ceil(ratio * n)` patches chosen uniformly without replacement.
pub fn tokenize_random_intra(n: usize, drop_ratio: f64, seed: u64) -> Result<GroupAssignment> {
    let cfg = IntraConfig::new(drop_ratio)?;
    let k = drop_count(cfg.drop_ratio, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verdicts = vec![Verdict::Intact; n];
    for p in index::sample(&mut rng, n, k) {
        verdicts[p] = Verdict::Dropped;
    }
    GroupAssignment::new(TokenizeMode::RandomIntra, None, verdicts)
}

/// Cosine distances between patches and visual words. Entries involving a
/// zero-norm vector are undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    n_patches: usize,
    n_words: usize,
    values: Vec<f64>,
}

impl DistanceTable {
    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn get(&self, patch: usize, word: usize) -> Option<f64> {
        let v = self.values[patch * self.n_words + word];
        (!v.is_nan()).then_some(v)
    }

    pub fn row(&self, patch: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values[patch * self.n_words..(patch + 1) * self.n_words]
            .iter()
            .map(|&v| (!v.is_nan()).then_some(v))
    }
}

fn squared_norms(rows: &[f32], dim: usize) -> Vec<f64> {
    rows.chunks_exact(dim)
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .collect()
}

pub(crate) fn cosine_table_rows(
    rows: &[f32],
    dim: usize,
    vocab: &Vocabulary,
) -> Result<DistanceTable> {
    if dim != vocab.patch_dim() {
        return Err(Error::DimensionMismatch {
            expected: vocab.patch_dim(),
            found: dim,
        });
    }
    let n = rows.len() / dim;
    let v = vocab.vocab_size();
    let patch_norms = squared_norms(rows, dim);
    let word_norms = squared_norms(vocab.centroids(), dim);
    let mut values = Vec::with_capacity(n * v);
    for (row, &pn) in rows.chunks_exact(dim).zip(&patch_norms) {
        for (word, &wn) in vocab.words().zip(&word_norms) {
            if pn == 0.0 || wn == 0.0 {
                values.push(f64::NAN);
                continue;
            }
            let dot: f64 = row
                .iter()
                .zip(word)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            // a single sqrt keeps identical and power-of-two-scaled vectors at
            // exactly zero distance
            values.push((1.0 - dot / (pn * wn).sqrt()).clamp(0.0, 2.0));
        }
    }
    Ok(DistanceTable {
        n_patches: n,
        n_words: v,
        values,
    })
}

pub fn cosine_distance_table(patches: &PatchMatrix, vocab: &Vocabulary) -> Result<DistanceTable> {
    cosine_table_rows(patches.as_slice(), patches.patch_dim(), vocab)
}

/// Closest defined word of one table row; ties go to the lower index.
fn closest<I: Iterator<Item = Option<f64>>>(row: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (w, d) in row.enumerate() {
        if let Some(d) = d {
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((w, d));
            }
        }
    }
    best
}

fn verdict_for(best: Option<(usize, f64)>, threshold: f64) -> Verdict {
    match best {
        Some((w, d)) if d <= threshold => Verdict::Matched(w),
        _ => Verdict::Intact,
    }
}

fn match_table(table: &DistanceTable, threshold: f64) -> Vec<Verdict> {
    (0..table.n_patches)
        .map(|p| verdict_for(closest(table.row(p)), threshold))
        .collect()
}

fn require_space(vocab: &Vocabulary, expected: VocabSpace) -> Result<()> {
    if vocab.space() != expected {
        return Err(Error::SpaceMismatch {
            expected,
            found: vocab.space(),
        });
    }
    Ok(())
}

/// Matches each patch to its closest pixel-space word when the cosine
/// distance is at most the threshold; otherwise the patch stays intact.
pub fn tokenize_inter(patches: &PatchMatrix, cfg: &InterConfig<'_>) -> Result<GroupAssignment> {
    require_space(cfg.vocab, VocabSpace::Pixel)?;
    let table = cosine_distance_table(patches, cfg.vocab)?;
    GroupAssignment::new(
        TokenizeMode::Inter,
        Some(cfg.threshold),
        match_table(&table, cfg.threshold),
    )
}

/// Inter-image matching with distances drawn i.i.d. from U[0, 2] in
/// patch-major order instead of measured.
pub fn tokenize_random_inter(
    n: usize,
    vocab_size: usize,
    threshold: f64,
    seed: u64,
) -> Result<GroupAssignment> {
    check_threshold(threshold)?;
    if vocab_size == 0 {
        return Err(Error::InvalidConfig("vocab_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(0.0f64, 2.0).expect("valid bounds");
    let verdicts = (0..n)
        .map(|_| {
            let row: Vec<Option<f64>> = (0..vocab_size)
                .map(|_| Some(dist.sample(&mut rng)))
                .collect();
            verdict_for(closest(row.into_iter()), threshold)
        })
        .collect();
    GroupAssignment::new(TokenizeMode::RandomInter, Some(threshold), verdicts)
}

/// Maps flattened patches into the space an embedding vocabulary lives in.
pub trait PatchProjection {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Projects row-major `rows` of `input_dim` values each.
    fn project_rows(&self, rows: &[f32]) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityProjection {
    pub dim: usize,
}

impl PatchProjection for IdentityProjection {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn project_rows(&self, rows: &[f32]) -> Result<Vec<f32>> {
        Ok(rows.to_vec())
    }
}

fn project(patches: &PatchMatrix, projection: &dyn PatchProjection) -> Result<Vec<f32>> {
    if patches.patch_dim() != projection.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: projection.input_dim(),
            found: patches.patch_dim(),
        });
    }
    projection.project_rows(patches.as_slice())
}

/// Clusters projected patches into an embedding-space vocabulary.
pub fn build_vocab_embedding<I>(
    corpus: I,
    projection: &dyn PatchProjection,
    cfg: &KMeansConfig,
    corpus_name: &str,
) -> Result<Vocabulary>
where
    I: IntoIterator,
    I::Item: Borrow<PatchMatrix>,
{
    let mut patch_size = None;
    let mut rows = Vec::new();
    for pm in corpus {
        let pm = pm.borrow();
        patch_size.get_or_insert(pm.patch_size());
        rows.extend(project(pm, projection)?);
    }
    let patch_size = patch_size.ok_or_else(|| Error::Empty("corpus has no images".into()))?;
    let (vocab, _) = vocab::fit_vocabulary(
        &rows,
        patch_size,
        projection.output_dim(),
        VocabSpace::Embedding,
        cfg,
        corpus_name,
    )?;
    Ok(vocab)
}

/// Inter-image matching carried out on projected patches against an
/// embedding-space vocabulary.
pub fn tokenize_inter_embed(
    patches: &PatchMatrix,
    projection: &dyn PatchProjection,
    cfg: &InterConfig<'_>,
) -> Result<GroupAssignment> {
    require_space(cfg.vocab, VocabSpace::Embedding)?;
    let projected = project(patches, projection)?;
    let table = cosine_table_rows(&projected, projection.output_dim(), cfg.vocab)?;
    GroupAssignment::new(
        TokenizeMode::InterEmbed,
        Some(cfg.threshold),
        match_table(&table, cfg.threshold),
    )
}
