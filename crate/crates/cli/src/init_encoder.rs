use anyhow::{bail, Result};
use serde_json::json;
use vwt::encoder::{EncoderConfig, EncoderParams};

use crate::build_vocab::DEFAULT_PATCH_SIZE;
use crate::cli::InitEncoderArgs;
use crate::config::{pick, InitEncoderFile};
use crate::manifest::{sibling_path, ArgList, RunManifest};

pub fn run(args: InitEncoderArgs, file: InitEncoderFile) -> Result<()> {
    let defaults = EncoderConfig::default();
    let patch_size = pick(args.patch_size, file.patch_size, DEFAULT_PATCH_SIZE);
    let channels = pick(args.channels, file.channels, 3);
    if channels != 1 && channels != 3 {
        bail!(vwt::Error::InvalidConfig(format!("channels must be 1 or 3, got {channels}")));
    }
    let config = EncoderConfig {
        embed_dim: pick(args.embed_dim, file.embed_dim, defaults.embed_dim),
        depth: pick(args.depth, file.depth, defaults.depth),
        heads: pick(args.heads, file.heads, defaults.heads),
        patch_dim: patch_size * patch_size * channels,
        max_tokens: pick(args.max_tokens, file.max_tokens, defaults.max_tokens),
        seed: pick(args.seed, file.seed, defaults.seed),
    };
    let params = EncoderParams::random(config)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    params.save(&args.out)?;

    let argv = ArgList::new("init-encoder")
        .flag("embed-dim", config.embed_dim)
        .flag("depth", config.depth)
        .flag("heads", config.heads)
        .flag("patch-size", patch_size)
        .flag("channels", channels)
        .flag("max-tokens", config.max_tokens)
        .flag("seed", config.seed)
        .path("out", &args.out)
        .into_vec();
    let resolved = json!({
        "embed_dim": config.embed_dim,
        "depth": config.depth,
        "heads": config.heads,
        "patch_size": patch_size,
        "channels": channels,
        "patch_dim": config.patch_dim,
        "max_tokens": config.max_tokens,
    });
    let mut manifest = RunManifest::new("init-encoder", Some(config.seed), resolved, argv);
    manifest.outputs = vec![args.out.clone()];
    manifest.write(&sibling_path(&args.out))?;
    println!(
        "wrote {}: D={} depth={} heads={} patch_dim={}",
        args.out.display(),
        config.embed_dim,
        config.depth,
        config.heads,
        config.patch_dim
    );
    Ok(())
}
