use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use vwt::analysis::{
    efficiency_sweep, length_stats, load_labels, subgroup_breakdown, vocab_usage,
    write_samples_csv, SampleRecord,
};
use vwt::GroupAssignment;

use crate::cli::{BenchArgs, StatsArgs};
use crate::config::{pick, BenchFile};
use crate::manifest::{ArgList, RunManifest, MANIFEST_NAME};
use crate::tokenize::ASSIGNMENT_SUFFIX;

pub const DEFAULT_LENGTHS: [u64; 5] = [197, 148, 132, 99, 59];
pub const DEFAULT_BATCH_SIZES: [u64; 6] = [1, 2, 4, 8, 16, 32];
pub const DEFAULT_EMBED_DIM: u64 = 768;
pub const DEFAULT_DEPTH: u64 = 12;

/// `(sample_id, path)` for every assignment file in `dir`, sorted by id.
fn assignment_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(id) = name.strip_suffix(ASSIGNMENT_SUFFIX) {
            files.push((id.to_string(), path.clone()));
        }
    }
    files.sort();
    if files.is_empty() {
        bail!(vwt::Error::Empty(format!(
            "no *{ASSIGNMENT_SUFFIX} files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn write_text(path: &Path, text: String) -> Result<PathBuf> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

pub fn run_stats(args: StatsArgs) -> Result<()> {
    let files = assignment_files(&args.assignments_dir)?;
    let mut samples: Vec<(String, GroupAssignment)> = Vec::with_capacity(files.len());
    for (id, path) in &files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let a = GroupAssignment::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        samples.push((id.clone(), a));
    }
    let lengths = length_stats(samples.iter().map(|(_, a)| a))?;
    let usage = match args.vocab_size {
        Some(v) => Some(vocab_usage(samples.iter().map(|(_, a)| a), v)?),
        None => None,
    };
    let subgroups = match &args.labels {
        Some(path) => Some(subgroup_breakdown(&samples, &load_labels(path)?)?),
        None => None,
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let report = json!({ "lengths": lengths, "usage": usage, "subgroups": subgroups });
    let mut outputs = vec![write_text(
        &args.out.join("stats.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?];
    let records: Vec<SampleRecord> = samples.iter().map(|(id, a)| SampleRecord::new(id.clone(), a)).collect();
    let csv_path = args.out.join("samples.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_samples_csv(file, &records)?;
    outputs.push(csv_path);

    let argv = ArgList::new("stats")
        .path("assignments-dir", &args.assignments_dir)
        .opt_path("labels", args.labels.as_ref())
        .opt("vocab-size", args.vocab_size)
        .path("out", &args.out)
        .into_vec();
    let config = json!({ "vocab_size": args.vocab_size, "samples": samples.len() });
    let mut manifest = RunManifest::new("stats", None, config, argv);
    manifest.inputs = files.into_iter().map(|(_, p)| p).collect();
    manifest.inputs.extend(args.labels.clone());
    manifest.outputs = outputs;
    manifest.write(&args.out.join(MANIFEST_NAME))?;

    println!(
        "{} sample(s): mean length {:.2} (min {}, max {}), mean ratio {:.4}",
        lengths.count, lengths.mean, lengths.min, lengths.max, lengths.mean_ratio
    );
    if let Some(groups) = &subgroups {
        for (g, s) in groups {
            println!("  {g}: {} sample(s), mean length {:.2}", s.count, s.mean);
        }
    }
    Ok(())
}

pub fn run_bench(args: BenchArgs, file: BenchFile) -> Result<()> {
    let lengths = pick(args.lengths, file.lengths, DEFAULT_LENGTHS.to_vec());
    let batch_sizes = pick(args.batch_sizes, file.batch_sizes, DEFAULT_BATCH_SIZES.to_vec());
    let embed_dim = pick(args.embed_dim, file.embed_dim, DEFAULT_EMBED_DIM);
    let depth = pick(args.depth, file.depth, DEFAULT_DEPTH);
    let rows = efficiency_sweep(&lengths, &batch_sizes, embed_dim, depth)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("bench.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let report = json!({ "embed_dim": embed_dim, "depth": depth, "rows": rows });
    let json_path = write_text(&args.out.join("bench.json"), serde_json::to_string_pretty(&report)? + "\n")?;

    let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let argv = ArgList::new("bench")
        .flag("lengths", join(&lengths))
        .flag("batch-sizes", join(&batch_sizes))
        .flag("embed-dim", embed_dim)
        .flag("depth", depth)
        .path("out", &args.out)
        .into_vec();
    let config = json!({
        "lengths": lengths,
        "batch_sizes": batch_sizes,
        "embed_dim": embed_dim,
        "depth": depth,
    });
    let mut manifest = RunManifest::new("bench", None, config, argv);
    manifest.outputs = vec![csv_path, json_path];
    manifest.write(&args.out.join(MANIFEST_NAME))?;

    println!("{:>8} {:>6} {:>22} {:>10}", "length", "batch", "flops", "reduction");
    for r in &rows {
        println!(
            "{:>8} {:>6} {:>22} {:>10.4}",
            r.length, r.batch_size, r.batch_flops, r.reduction_factor
        );
    }
    Ok(())
}
