use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use vwt::analysis::{length_stats, vocab_usage};
use vwt::encoder::EncoderParams;
use vwt::render::{render_drop_overlay, render_match_overlay, OverlaySpec, DEFAULT_ALPHA};
use vwt::tokenizer::{
    tokenize_inter, tokenize_inter_embed, tokenize_intra, tokenize_random_inter,
    tokenize_random_intra, DEFAULT_DROP_RATIO, DEFAULT_THRESHOLD,
};
use vwt::{
    load_vocab, patchify, save_image, GroupAssignment, InterConfig, IntraConfig, ResizeMode,
    TokenizeMode, VocabSpace, Vocabulary,
};

use crate::build_vocab::{resize_name, DEFAULT_PATCH_SIZE};
use crate::cli::TokenizeArgs;
use crate::config::{pick, TokenizeFile};
use crate::inputs::{load_samples, resolve, Prep, Sample};
use crate::manifest::{ArgList, RunManifest, MANIFEST_NAME};

pub const ASSIGNMENT_SUFFIX: &str = ".assign.json";

/// Per-sample seed for the random modes, stable under reordering or
/// subsetting of the input set.
fn sample_seed(seed: u64, id: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0100_0000_01b3;
    let hash = id
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME));
    hash ^ seed
}

enum Plan {
    Intra(IntraConfig),
    RandomIntra { ratio: f64 },
    Inter { vocab: Vocabulary, threshold: f64 },
    InterEmbed { vocab: Vocabulary, encoder: EncoderParams, threshold: f64 },
    RandomInter { vocab_size: usize, threshold: f64 },
}

impl Plan {
    fn apply(&self, sample: &Sample, patch_size: usize, seed: u64) -> Result<GroupAssignment> {
        let pm = patchify(&sample.image, patch_size)?;
        let seed = sample_seed(seed, &sample.id);
        Ok(match self {
            Plan::Intra(cfg) => tokenize_intra(&pm, cfg),
            Plan::RandomIntra { ratio } => tokenize_random_intra(pm.n_patches(), *ratio, seed)?,
            Plan::Inter { vocab, threshold } => tokenize_inter(&pm, &InterConfig::new(*threshold, vocab)?)?,
            Plan::InterEmbed {
                vocab,
                encoder,
                threshold,
            } => tokenize_inter_embed(&pm, encoder, &InterConfig::new(*threshold, vocab)?)?,
            Plan::RandomInter {
                vocab_size,
                threshold,
            } => tokenize_random_inter(pm.n_patches(), *vocab_size, *threshold, seed)?,
        })
    }
}

pub fn run(args: TokenizeArgs, file: TokenizeFile, pool: &rayon::ThreadPool) -> Result<()> {
    let mode: TokenizeMode = pick(args.mode, file.mode, "inter".into()).parse()?;
    let threshold = pick(args.threshold, file.threshold, DEFAULT_THRESHOLD);
    let ratio = pick(args.ratio, file.ratio, DEFAULT_DROP_RATIO);
    let seed = pick(args.seed, file.seed, 0);
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    let resize_mode: ResizeMode = pick(args.resize_mode, file.resize_mode, "bilinear".into()).parse()?;
    let image_size = args.image_size.or(file.image_size);
    let vocab_path = args.vocab.or(file.vocab);
    let encoder_path = args.encoder.or(file.encoder);
    let flag_patch = args.patch_size.or(file.patch_size);
    let flag_vocab_size = args.vocab_size.or(file.vocab_size);

    let vocab = vocab_path.as_ref().map(load_vocab).transpose()?;
    let patch_size = match (&vocab, flag_patch) {
        (Some(v), Some(p)) if v.patch_size() != p => {
            bail!("--patch-size {p} disagrees with the vocabulary's patch size {}", v.patch_size())
        }
        (Some(v), _) => v.patch_size(),
        (None, p) => p.unwrap_or(DEFAULT_PATCH_SIZE),
    };

    // Validate ranges up front so a bad flag fails before any image is read.
    if !(0.0..=2.0).contains(&threshold) {
        bail!(vwt::Error::InvalidConfig(format!("threshold {threshold} outside [0, 2]")));
    }
    let intra = IntraConfig::new(ratio)?;
    let plan = match mode {
        TokenizeMode::Intra => Plan::Intra(intra),
        TokenizeMode::RandomIntra => Plan::RandomIntra { ratio },
        TokenizeMode::Inter => Plan::Inter {
            vocab: vocab.context("--vocab is required in inter mode")?,
            threshold,
        },
        TokenizeMode::InterEmbed => {
            let vocab = vocab.context("--vocab is required in inter-embed mode")?;
            let path = encoder_path.as_ref().context("--encoder is required in inter-embed mode")?;
            if vocab.space() != VocabSpace::Embedding {
                bail!(vwt::Error::SpaceMismatch {
                    expected: VocabSpace::Embedding,
                    found: vocab.space(),
                });
            }
            Plan::InterEmbed {
                vocab,
                encoder: EncoderParams::load(path)?,
                threshold,
            }
        }
        TokenizeMode::RandomInter => {
            let vocab_size = match (&vocab, flag_vocab_size) {
                (Some(v), None) => v.vocab_size(),
                (None, Some(n)) => n,
                (Some(v), Some(n)) if v.vocab_size() == n => n,
                (Some(v), Some(n)) => bail!("--vocab-size {n} disagrees with the vocabulary's {} words", v.vocab_size()),
                (None, None) => bail!("random-inter mode needs --vocab or --vocab-size"),
            };
            Plan::RandomInter {
                vocab_size,
                threshold,
            }
        }
    };
    let vocab_size = match &plan {
        Plan::Inter { vocab, .. } | Plan::InterEmbed { vocab, .. } => Some(vocab.vocab_size()),
        Plan::RandomInter { vocab_size, .. } => Some(*vocab_size),
        _ => None,
    };

    let paths = resolve(args.image.as_deref(), args.input_dir.as_deref())?;
    let samples = load_samples(
        &paths,
        Prep {
            image_size,
            resize_mode,
        },
        pool,
    )?;
    let assignments: Vec<GroupAssignment> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                plan.apply(s, patch_size, seed)
                    .with_context(|| format!("tokenizing {}", s.path.display()))
            })
            .collect::<Result<_>>()
    })?;

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    for (s, a) in samples.iter().zip(&assignments) {
        let path = args.out_dir.join(format!("{}{ASSIGNMENT_SUFFIX}", s.id));
        fs::write(&path, a.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }

    if let Some(dir) = &args.render_out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let rendered: Vec<PathBuf> = pool.install(|| {
            samples
                .par_iter()
                .zip(&assignments)
                .map(|(s, a)| {
                    let mut spec = OverlaySpec::new(&s.image, a, patch_size);
                    spec.alpha = alpha;
                    let overlay = if mode.is_intra_family() {
                        render_drop_overlay(&spec)?
                    } else {
                        render_match_overlay(&spec)?
                    };
                    let path = dir.join(format!("{}.png", s.id));
                    save_image(&overlay, &path)?;
                    Ok(path)
                })
                .collect::<Result<_>>()
        })?;
        outputs.extend(rendered);
    }

    let stats = length_stats(&assignments)?;
    let usage = match vocab_size {
        Some(v) => Some(vocab_usage(&assignments, v)?),
        None => None,
    };
    let stats_path = args.stats_out.clone().unwrap_or_else(|| args.out_dir.join("stats.json"));
    if let Some(parent) = stats_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let report = json!({ "mode": mode.as_str(), "lengths": stats, "usage": usage });
    fs::write(&stats_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", stats_path.display()))?;
    outputs.push(stats_path.clone());

    let argv = ArgList::new("tokenize")
        .flag("mode", mode.as_str())
        .opt_path("image", args.image.as_ref())
        .opt_path("input-dir", args.input_dir.as_ref())
        .opt_path("vocab", vocab_path.as_ref())
        .opt_path("encoder", encoder_path.as_ref())
        .flag("threshold", threshold)
        .flag("ratio", ratio)
        .flag("seed", seed)
        .flag("patch-size", patch_size)
        .opt("vocab-size", flag_vocab_size)
        .opt("image-size", image_size)
        .flag("resize-mode", resize_name(resize_mode))
        .path("out-dir", &args.out_dir)
        .path("stats-out", &stats_path)
        .opt_path("render-out", args.render_out.as_ref())
        .flag("alpha", alpha)
        .into_vec();
    let config = json!({
        "mode": mode.as_str(),
        "threshold": mode.is_inter_family().then_some(threshold),
        "ratio": mode.is_intra_family().then_some(ratio),
        "patch_size": patch_size,
        "vocab_size": vocab_size,
        "image_size": image_size,
        "resize_mode": resize_name(resize_mode),
        "alpha": alpha,
        "samples": samples.len(),
    });
    let mut manifest = RunManifest::new("tokenize", Some(seed), config, argv);
    manifest.inputs = samples.iter().map(|s| s.path.clone()).collect();
    manifest.inputs.extend(vocab_path);
    manifest.inputs.extend(encoder_path);
    manifest.outputs = outputs;
    manifest.write(&args.out_dir.join(MANIFEST_NAME))?;

    println!(
        "{} sample(s), mode {}: mean length {:.2} (min {}, max {})",
        stats.count, mode, stats.mean, stats.min, stats.max
    );
    Ok(())
}
