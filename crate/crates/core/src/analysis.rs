//! Token-length statistics, visual-word usage, subgroup breakdowns and an
//! analytic FLOPs proxy for encoder cost.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{GroupAssignment, TokenizeMode, Verdict};

/// Mergeable partial aggregate of sequence lengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LengthAccumulator {
    lengths: Vec<usize>,
    ratios: Vec<f64>,
}

impl LengthAccumulator {
    pub fn push(&mut self, assignment: &GroupAssignment) {
        let len = assignment.compressed_length();
        self.push_length(len, assignment.n_patches() + 1);
    }

    /// Records a length against its uncompressed length (`N + 1`).
    pub fn push_length(&mut self, length: usize, full_length: usize) {
        self.lengths.push(length);
        self.ratios.push(length as f64 / full_length as f64);
    }

    pub fn merge(mut self, other: LengthAccumulator) -> Self {
        self.lengths.extend(other.lengths);
        self.ratios.extend(other.ratios);
        self
    }

    pub fn finish(self) -> Result<LengthStats> {
        if self.lengths.is_empty() {
            return Err(Error::Empty("no assignments to aggregate".into()));
        }
        let count = self.lengths.len();
        let total: u64 = self.lengths.iter().map(|&l| l as u64).sum();
        Ok(LengthStats {
            count,
            mean: total as f64 / count as f64,
            min: *self.lengths.iter().min().expect("non-empty"),
            max: *self.lengths.iter().max().expect("non-empty"),
            mean_ratio: self.ratios.iter().sum::<f64>() / count as f64,
            lengths: self.lengths,
        })
    }
}

/// Sequence lengths with [CLS] counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    /// Mean of `length / (N + 1)`.
    pub mean_ratio: f64,
    pub lengths: Vec<usize>,
}

pub fn length_stats<I>(assignments: I) -> Result<LengthStats>
where
    I: IntoIterator,
    I::Item: Borrow<GroupAssignment>,
{
    let mut acc = LengthAccumulator::default();
    for a in assignments {
        acc.push(a.borrow());
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabUsage {
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub unused: usize,
    pub total_matches: u64,
}

/// Counts how often each visual word was matched across inter-family
/// assignments.
pub fn vocab_usage<I>(assignments: I, vocab_size: usize) -> Result<VocabUsage>
where
    I: IntoIterator,
    I::Item: Borrow<GroupAssignment>,
{
    let mut counts = vec![0u64; vocab_size];
    for a in assignments {
        let a = a.borrow();
        if !a.mode().is_inter_family() {
            return Err(Error::ModeMismatch(format!(
                "vocabulary usage needs inter-family assignments, got {}",
                a.mode()
            )));
        }
        for v in a.verdicts() {
            if let Verdict::Matched(w) = *v {
                let slot = counts.get_mut(w).ok_or(Error::DimensionMismatch {
                    expected: vocab_size,
                    found: w + 1,
                })?;
                *slot += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let probabilities = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Ok(VocabUsage {
        unused: counts.iter().filter(|&&c| c == 0).count(),
        counts,
        probabilities,
        total_matches: total,
    })
}

/// Reads `sample_id,subgroup_id` rows; a leading header row is skipped.
pub fn read_labels<R: io::Read>(reader: R) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut labels = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "label row {} has {} fields, expected 2",
                i + 1,
                record.len()
            )));
        }
        if i == 0 && &record[0] == "sample_id" {
            continue;
        }
        labels.insert(record[0].to_string(), record[1].to_string());
    }
    Ok(labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file)
}

/// Length statistics per subgroup.
pub fn subgroup_breakdown<S, A>(
    samples: &[(S, A)],
    labels: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, LengthStats>>
where
    S: AsRef<str>,
    A: Borrow<GroupAssignment>,
{
    let mut groups: BTreeMap<String, LengthAccumulator> = BTreeMap::new();
    for (id, a) in samples {
        let id = id.as_ref();
        let group = labels
            .get(id)
            .ok_or_else(|| Error::MissingLabel(id.to_string()))?;
        groups.entry(group.clone()).or_default().push(a.borrow());
    }
    groups
        .into_iter()
        .map(|(g, acc)| acc.finish().map(|s| (g, s)))
        .collect()
}

/// One row of the per-sample CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub mode: TokenizeMode,
    pub length: usize,
    /// `length / (N + 1)`
    pub ratio: f64,
}

impl SampleRecord {
    pub fn new(sample_id: impl Into<String>, assignment: &GroupAssignment) -> Self {
        let length = assignment.compressed_length();
        SampleRecord {
            sample_id: sample_id.into(),
            mode: assignment.mode(),
            length,
            ratio: length as f64 / (assignment.n_patches() + 1) as f64,
        }
    }
}

pub fn write_samples_csv<W: io::Write>(writer: W, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Analytic encoder cost: per layer, `4 L D^2` for the Q/K/V/output
/// projections, `2 L^2 D` for scores and mixing, `8 L D^2` for the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsProxy {
    pub embed_dim: u64,
    pub depth: u64,
}

impl FlopsProxy {
    pub fn new(embed_dim: u64, depth: u64) -> Result<Self> {
        if embed_dim == 0 || depth == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim and depth must be positive".into(),
            ));
        }
        Ok(FlopsProxy { embed_dim, depth })
    }

    pub fn flops(&self, length: u64) -> u128 {
        let (l, d, depth) = (length as u128, self.embed_dim as u128, self.depth as u128);
        depth * (4 * l * d * d + 2 * l * l * d + 8 * l * d * d)
    }

    pub fn batch_flops(&self, length: u64, batch: u64) -> u128 {
        batch as u128 * self.flops(length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub length: u64,
    pub batch_size: u64,
    pub flops_per_sample: u128,
    pub batch_flops: u128,
    /// `flops(baseline) / flops(length)`, baseline being the first length.
    pub reduction_factor: f64,
}

pub fn efficiency_sweep(
    lengths: &[u64],
    batch_sizes: &[u64],
    embed_dim: u64,
    depth: u64,
) -> Result<Vec<FlopsRow>> {
    let proxy = FlopsProxy::new(embed_dim, depth)?;
    let baseline = *lengths
        .first()
        .ok_or_else(|| Error::Empty("no lengths to sweep".into()))?;
    if lengths.contains(&0) || batch_sizes.contains(&0) || batch_sizes.is_empty() {
        return Err(Error::InvalidConfig(
            "lengths and batch sizes must be positive and non-empty".into(),
        ));
    }
    let base = proxy.flops(baseline) as f64;
    let mut rows = Vec::with_capacity(lengths.len() * batch_sizes.len());
    for &length in lengths {
        for &batch_size in batch_sizes {
            let per = proxy.flops(length);
            rows.push(FlopsRow {
                length,
                batch_size,
                flops_per_sample: per,
                batch_flops: proxy.batch_flops(length, batch_size),
                reduction_factor: base / per as f64,
            });
        }
    }
    Ok(rows)
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_length(n: usize, intact: usize) -> GroupAssignment {
        let verdicts = (0..n)
            .map(|i| if i < intact { Verdict::Intact } else { Verdict::Dropped })
            .collect();
        GroupAssignment::new(TokenizeMode::Intra, None, verdicts).unwrap()
    }

    fn matched(words: &[usize]) -> GroupAssignment {
        GroupAssignment::new(
            TokenizeMode::Inter,
            Some(0.1),
            words.iter().map(|&w| Verdict::Matched(w)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn stats_mean_and_empty() {
        let s = length_stats([with_length(300, 99), with_length(300, 199)]).unwrap();
        assert_eq!(s.mean, 150.0);
        assert_eq!((s.min, s.max), (100, 200));
        assert!(length_stats(Vec::<GroupAssignment>::new()).is_err());
    }

    #[test]
    fn all_intact_single() {
        let s = length_stats([with_length(196, 196)]).unwrap();
        assert_eq!(s.lengths, vec![197]);
        assert_eq!(s.mean_ratio, 1.0);
    }

    #[test]
    fn usage_counts() {
        let intact =
            GroupAssignment::new(TokenizeMode::Inter, Some(0.1), vec![Verdict::Intact; 4]).unwrap();
        let none = vocab_usage([intact], 6).unwrap();
        assert_eq!(none.unused, 6);
        assert!(none.probabilities.iter().all(|&p| p == 0.0));

        let one_hot = vocab_usage([matched(&[3, 3, 3])], 5).unwrap();
        assert_eq!(one_hot.probabilities, vec![0.0, 0.0, 0.0, 1.0, 0.0]);

        assert!(matches!(
            vocab_usage([with_length(3, 1)], 4),
            Err(Error::ModeMismatch(_))
        ));
        assert!(vocab_usage([matched(&[7])], 4).is_err());
    }

    #[test]
    fn labels_parse_with_header() {
        let csv = "sample_id,subgroup_id\na,0\nb, 1\n";
        let labels = read_labels(csv.as_bytes()).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels["b"], "1");
        assert!(read_labels("a,0,9\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_label_names_sample() {
        let labels = read_labels("a,0\n".as_bytes()).unwrap();
        let samples = vec![("a", with_length(4, 2)), ("zz", with_length(4, 2))];
        match subgroup_breakdown(&samples, &labels) {
            Err(Error::MissingLabel(id)) => assert_eq!(id, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flops_polynomial_small_values() {
        let p = FlopsProxy::new(2, 3).unwrap();
        // L=1: 3 * (4*1*4 + 2*1*2 + 8*1*4) = 3 * 52
        assert_eq!(p.flops(1), 156);
        // L=3: 3 * (4*3*4 + 2*9*2 + 8*3*4) = 3 * 180
        assert_eq!(p.flops(3), 540);
        assert_eq!(p.batch_flops(3, 2), 1080);
    }

    #[test]
    fn sweep_rejects_zero() {
        assert!(efficiency_sweep(&[197], &[0], 64, 2).is_err());
        assert!(efficiency_sweep(&[], &[1], 64, 2).is_err());
        assert!(efficiency_sweep(&[197], &[1], 0, 2).is_err());
    }

    #[test]
    fn csv_columns() {
        let rec = SampleRecord::new("img0", &with_length(196, 98));
        let mut out = Vec::new();
        write_samples_csv(&mut out, &[rec]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("sample_id,mode,length,ratio\nimg0,intra,99,"));
    }

    #[test]
    fn sig_figs() {
        assert_eq!(round_sig(2.0312, 3), 2.03);
        assert_eq!(round_sig(1234.5, 2), 1200.0);
    }
}
