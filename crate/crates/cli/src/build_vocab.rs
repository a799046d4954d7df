use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use vwt::encoder::EncoderParams;
use vwt::tokenizer::build_vocab_embedding;
use vwt::vocab::build_vocab_with_report;
use vwt::{patchify, save_vocab, KMeansConfig, KMeansMode, PatchMatrix, ResizeMode};

use crate::cli::BuildVocabArgs;
use crate::config::{pick, BuildVocabFile};
use crate::inputs::{list_images, load_samples, Prep};
use crate::manifest::{sibling_path, ArgList, RunManifest};

pub const DEFAULT_VOCAB_SIZE: usize = 1000;
pub const DEFAULT_PATCH_SIZE: usize = 16;

pub fn run(args: BuildVocabArgs, file: BuildVocabFile, pool: &rayon::ThreadPool) -> Result<()> {
    let input_dir = args
        .input_dir
        .or(file.input_dir)
        .context("--input-dir is required")?;
    let out = args.out.or(file.out).context("--out is required")?;
    let patch_size = pick(args.patch_size, file.patch_size, DEFAULT_PATCH_SIZE);
    let vocab_size = pick(args.vocab_size, file.vocab_size, DEFAULT_VOCAB_SIZE);
    let mode: KMeansMode = pick(args.mode, file.mode, "minibatch".into()).parse()?;
    let resize_mode: ResizeMode = pick(args.resize_mode, file.resize_mode, "bilinear".into()).parse()?;
    let image_size = args.image_size.or(file.image_size);
    let encoder = args.encoder.or(file.encoder);

    let defaults = KMeansConfig::new(vocab_size);
    let cfg = KMeansConfig {
        vocab_size,
        batch_size: pick(args.batch_size, file.batch_size, defaults.batch_size),
        max_iters: pick(args.max_iters, file.max_iters, defaults.max_iters),
        seed: pick(args.seed, file.seed, defaults.seed),
        mode,
        tol: pick(args.tol, file.tol, defaults.tol),
    };
    cfg.validate()?;

    let paths = list_images(&input_dir)?;
    let samples = load_samples(
        &paths,
        Prep {
            image_size,
            resize_mode,
        },
        pool,
    )?;
    let corpus: Vec<PatchMatrix> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| patchify(&s.image, patch_size).with_context(|| s.path.display().to_string()))
            .collect::<Result<_>>()
    })?;
    let corpus_name = corpus_name(&input_dir);

    let (vocab, report) = match &encoder {
        Some(path) => {
            let params = EncoderParams::load(path)?;
            (build_vocab_embedding(&corpus, &params, &cfg, &corpus_name)?, None)
        }
        None => {
            let (v, r) = build_vocab_with_report(&corpus, &cfg, &corpus_name)?;
            (v, Some(r))
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_vocab(&vocab, &out)?;

    let argv = ArgList::new("build-vocab")
        .path("input-dir", &input_dir)
        .flag("patch-size", patch_size)
        .flag("vocab-size", vocab_size)
        .flag("mode", mode_name(mode))
        .flag("batch-size", cfg.batch_size)
        .flag("max-iters", cfg.max_iters)
        .flag("tol", cfg.tol)
        .flag("seed", cfg.seed)
        .opt("image-size", image_size)
        .flag("resize-mode", resize_name(resize_mode))
        .opt_path("encoder", encoder.as_ref())
        .path("out", &out)
        .into_vec();
    let config = json!({
        "input_dir": input_dir,
        "patch_size": patch_size,
        "vocab_size": vocab_size,
        "mode": mode_name(mode),
        "batch_size": cfg.batch_size,
        "max_iters": cfg.max_iters,
        "tol": cfg.tol,
        "image_size": image_size,
        "resize_mode": resize_name(resize_mode),
        "space": vocab.space().to_string(),
        "encoder": encoder,
        "images_used": samples.len(),
        "patches": corpus.iter().map(PatchMatrix::n_patches).sum::<usize>(),
        "iterations": vocab.metadata().iterations,
        "converged": report.as_ref().map(|r| r.converged),
    });
    let mut manifest = RunManifest::new("build-vocab", Some(cfg.seed), config, argv);
    manifest.inputs = samples.iter().map(|s| s.path.clone()).collect();
    manifest.inputs.extend(encoder.clone());
    manifest.outputs = vec![out.clone()];
    manifest.write(&sibling_path(&out))?;

    println!(
        "wrote {}: {} {} words of dim {} from {} patches in {} iterations",
        out.display(),
        vocab.vocab_size(),
        vocab.space(),
        vocab.patch_dim(),
        corpus.iter().map(PatchMatrix::n_patches).sum::<usize>(),
        vocab.metadata().iterations,
    );
    Ok(())
}

fn corpus_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn mode_name(mode: KMeansMode) -> &'static str {
    match mode {
        KMeansMode::Lloyd => "lloyd",
        KMeansMode::Minibatch => "minibatch",
    }
}

pub fn resize_name(mode: ResizeMode) -> &'static str {
    match mode {
        ResizeMode::Nearest => "nearest",
        ResizeMode::Bilinear => "bilinear",
    }
}
