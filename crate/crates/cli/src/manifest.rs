use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Record of one invocation. `args` is the fully resolved command line, so
/// `vwt rerun <manifest>` repeats the run without the original config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: Value, args: Vec<String>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            args,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// `vocab.vwtv` -> `vocab.vwtv.manifest.json`.
pub fn sibling_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(MANIFEST_NAME);
    output.with_file_name(name)
}

/// Builds an argv from `(flag, value)` pairs, skipping absent values.
#[derive(Debug, Default)]
pub struct ArgList(Vec<String>);

impl ArgList {
    pub fn new(subcommand: &str) -> Self {
        ArgList(vec!["vwt".into(), subcommand.into()])
    }

    pub fn flag(mut self, name: &str, value: impl ToString) -> Self {
        self.0.push(format!("--{name}"));
        self.0.push(value.to_string());
        self
    }

    pub fn opt<T: ToString>(self, name: &str, value: Option<T>) -> Self {
        match value {
            Some(v) => self.flag(name, v),
            None => self,
        }
    }

    pub fn path(self, name: &str, value: &Path) -> Self {
        self.flag(name, value.display())
    }

    pub fn opt_path(self, name: &str, value: Option<&PathBuf>) -> Self {
        self.opt(name, value.map(|p| p.display()))
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }
}
