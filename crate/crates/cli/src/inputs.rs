use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use vwt::{load_image, resize, Image, ResizeMode};

pub const THREADS_ENV: &str = "VWT_THREADS";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "ppm", "pgm", "pnm", "vwti", "raw"];

/// Rayon pool sized by `VWT_THREADS` when set, else rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

#[derive(Debug, Clone, Copy)]
pub struct Prep {
    /// Square side to resize every image to; `None` keeps native size.
    pub image_size: Option<usize>,
    pub resize_mode: ResizeMode,
}

impl Prep {
    fn apply(&self, img: Image) -> vwt::Result<Image> {
        match self.image_size {
            Some(s) if (img.height(), img.width()) != (s, s) => resize(&img, (s, s), self.resize_mode),
            _ => Ok(img),
        }
    }
}

#[derive(Debug)]
pub struct Sample {
    pub id: String,
    pub path: PathBuf,
    pub image: Image,
}

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sample_id(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .with_context(|| format!("{} has no usable file name", path.display()))
}

/// Image files directly inside `dir`, sorted by name. Hidden files and files
/// without an image extension are ignored.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden && is_image_path(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// One `--image` or every image in `--input-dir`.
pub fn resolve(image: Option<&Path>, input_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    match (image, input_dir) {
        (Some(p), None) => Ok(vec![p.to_path_buf()]),
        (None, Some(d)) => {
            let paths = list_images(d)?;
            if paths.is_empty() {
                bail!("no image files in {}", d.display());
            }
            Ok(paths)
        }
        (Some(_), Some(_)) => bail!("pass either --image or --input-dir, not both"),
        (None, None) => bail!("one of --image or --input-dir is required"),
    }
}

/// Decodes and resizes in parallel, keeping input order. Unreadable files
/// are reported on stderr and skipped; it is an error if none remain.
pub fn load_samples(paths: &[PathBuf], prep: Prep, pool: &rayon::ThreadPool) -> Result<Vec<Sample>> {
    let mut seen = BTreeSet::new();
    for p in paths {
        let id = sample_id(p)?;
        if !seen.insert(id.clone()) {
            bail!("two inputs share the sample id {id:?}");
        }
    }
    let results: Vec<(PathBuf, vwt::Result<Image>)> = pool.install(|| {
        paths
            .par_iter()
            .map(|p| (p.clone(), load_image(p).and_then(|img| prep.apply(img))))
            .collect()
    });
    let mut samples = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (path, result) in results {
        match result {
            Ok(image) => samples.push(Sample {
                id: sample_id(&path)?,
                path,
                image,
            }),
            Err(e) => {
                skipped += 1;
                eprintln!("warning: skipping {}: {e}", path.display());
            }
        }
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} unreadable image(s)");
    }
    if samples.is_empty() {
        bail!("none of the {} input image(s) could be read", paths.len());
    }
    Ok(samples)
}
