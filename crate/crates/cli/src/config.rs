//! Optional TOML config file. Each subcommand reads its own table; any key
//! left out falls back to the built-in default, and any flag given on the
//! command line wins over both.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    #[serde(default)]
    pub build_vocab: BuildVocabFile,
    #[serde(default)]
    pub tokenize: TokenizeFile,
    #[serde(default)]
    pub bench: BenchFile,
    #[serde(default)]
    pub init_encoder: InitEncoderFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BuildVocabFile {
    pub input_dir: Option<PathBuf>,
    pub patch_size: Option<usize>,
    pub vocab_size: Option<usize>,
    pub mode: Option<String>,
    pub batch_size: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub image_size: Option<usize>,
    pub resize_mode: Option<String>,
    pub encoder: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TokenizeFile {
    pub mode: Option<String>,
    pub vocab: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub patch_size: Option<usize>,
    pub vocab_size: Option<usize>,
    pub image_size: Option<usize>,
    pub resize_mode: Option<String>,
    pub alpha: Option<f32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchFile {
    pub lengths: Option<Vec<u64>>,
    pub batch_sizes: Option<Vec<u64>>,
    pub embed_dim: Option<u64>,
    pub depth: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct InitEncoderFile {
    pub embed_dim: Option<usize>,
    pub depth: Option<usize>,
    pub heads: Option<usize>,
    pub patch_size: Option<usize>,
    pub channels: Option<usize>,
    pub max_tokens: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag, then config file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
