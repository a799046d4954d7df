//! Qualitative renderings: match overlays, drop overlays and vocabulary
//! atlases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{patchify, Image, PatchMatrix};
use crate::kmeans;
use crate::tokenizer::{GroupAssignment, Verdict};
use crate::vocab::{assign_nearest_rows, VocabSpace, Vocabulary};

pub const DEFAULT_ALPHA: f32 = 0.5;

/// Number of distinct 8-bit colors on the fully saturated, full-value hue
/// wheel.
const HUE_STEPS: usize = 6 * 255;

#[derive(Debug, Clone, Copy)]
pub struct OverlaySpec<'a> {
    pub image: &'a Image,
    pub assignment: &'a GroupAssignment,
    pub patch_size: usize,
    pub palette_seed: u64,
    pub alpha: f32,
}

impl<'a> OverlaySpec<'a> {
    pub fn new(image: &'a Image, assignment: &'a GroupAssignment, patch_size: usize) -> Self {
        OverlaySpec {
            image,
            assignment,
            patch_size,
            palette_seed: 0,
            alpha: DEFAULT_ALPHA,
        }
    }

    fn check(&self) -> Result<(usize, usize)> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        let p = self.patch_size;
        let (h, w) = (self.image.height(), self.image.width());
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::NotDivisible {
                height: h,
                width: w,
                patch_size: p,
            });
        }
        let (rows, cols) = (h / p, w / p);
        if rows * cols != self.assignment.n_patches() {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: self.assignment.n_patches(),
            });
        }
        Ok((rows, cols))
    }
}

/// Position `pos` (mod 1530) on the saturated hue wheel, red at 0.
fn hue_color(pos: usize) -> [u8; 3] {
    let pos = pos % HUE_STEPS;
    let (sector, t) = (pos / 255, (pos % 255) as u8);
    match sector {
        0 => [255, t, 0],
        1 => [255 - t, 255, 0],
        2 => [0, 255, t],
        3 => [0, 255 - t, 255],
        4 => [t, 0, 255],
        _ => [255, 0, 255 - t],
    }
}

/// `n` evenly spaced hues in seed-shuffled order. Colors are pairwise
/// distinct for `n <= 1530` and never black.
pub fn palette(n: usize, seed: u64) -> Vec<[u8; 3]> {
    let mut colors: Vec<[u8; 3]> = (0..n).map(|i| hue_color(i * HUE_STEPS / n.max(1))).collect();
    colors.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    colors
}

fn to_rgb(img: &Image) -> Vec<f32> {
    if img.channels() == 3 {
        img.data().to_vec()
    } else {
        img.data().iter().flat_map(|&v| [v, v, v]).collect()
    }
}

fn block_pixels(
    i: usize,
    cols: usize,
    p: usize,
    width: usize,
) -> impl Iterator<Item = usize> {
    let (br, bc) = (i / cols, i % cols);
    (0..p).flat_map(move |y| (0..p).map(move |x| (br * p + y) * width + bc * p + x))
}

/// Tints every matched patch with its word's color; intact patches keep the
/// source pixels. Output is always RGB.
pub fn render_match_overlay(spec: &OverlaySpec<'_>) -> Result<Image> {
    if !spec.assignment.mode().is_inter_family() {
        return Err(Error::ModeMismatch(format!(
            "match overlay needs an inter-family assignment, got {}",
            spec.assignment.mode()
        )));
    }
    let (_, cols) = spec.check()?;
    let words: Vec<usize> = spec.assignment.matched_words().into_iter().collect();
    let colors = palette(words.len(), spec.palette_seed);
    let mut data = to_rgb(spec.image);
    let (p, w, a) = (spec.patch_size, spec.image.width(), spec.alpha);
    for (i, v) in spec.assignment.verdicts().iter().enumerate() {
        let Verdict::Matched(word) = *v else { continue };
        let slot = words.binary_search(&word).expect("word collected above");
        let color = colors[slot].map(|c| c as f32 / 255.0);
        for px in block_pixels(i, cols, p, w) {
            for (dst, &c) in data[px * 3..px * 3 + 3].iter_mut().zip(&color) {
                *dst = ((1.0 - a) * *dst + a * c).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(spec.image.height(), spec.image.width(), 3, data)
}

/// Blacks out dropped patches and leaves everything else untouched.
pub fn render_drop_overlay(spec: &OverlaySpec<'_>) -> Result<Image> {
    if !spec.assignment.mode().is_intra_family() {
        return Err(Error::ModeMismatch(format!(
            "drop overlay needs an intra-family assignment, got {}",
            spec.assignment.mode()
        )));
    }
    let (_, cols) = spec.check()?;
    let c = spec.image.channels();
    let mut data = spec.image.data().to_vec();
    for (i, v) in spec.assignment.verdicts().iter().enumerate() {
        if *v == Verdict::Dropped {
            for px in block_pixels(i, cols, spec.patch_size, spec.image.width()) {
                data[px * c..(px + 1) * c].fill(0.0);
            }
        }
    }
    Image::new(spec.image.height(), spec.image.width(), c, data)
}

/// One row per visual word: the centroid as a patch, then the `per_word`
/// corpus patches assigned to it in order of Euclidean distance. Unfilled
/// cells are black.
pub fn render_vocab_atlas(
    vocab: &Vocabulary,
    corpus: &[PatchMatrix],
    per_word: usize,
) -> Result<Image> {
    if vocab.space() != VocabSpace::Pixel {
        return Err(Error::SpaceMismatch {
            expected: VocabSpace::Pixel,
            found: vocab.space(),
        });
    }
    let p = vocab.patch_size();
    let area = p * p;
    if area == 0 || !vocab.patch_dim().is_multiple_of(area) {
        return Err(Error::DimensionMismatch {
            expected: area,
            found: vocab.patch_dim(),
        });
    }
    let c = vocab.patch_dim() / area;
    if c != 1 && c != 3 {
        return Err(Error::InvalidImage(format!(
            "{c} channels per patch cannot be rendered"
        )));
    }
    let dim = vocab.patch_dim();
    let mut pool: Vec<f32> = Vec::new();
    for pm in corpus {
        if pm.patch_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: pm.patch_dim(),
            });
        }
        pool.extend_from_slice(pm.as_slice());
    }
    let labels = assign_nearest_rows(&pool, dim, vocab)?;
    let mut members: Vec<Vec<(f64, usize)>> = vec![Vec::new(); vocab.vocab_size()];
    for (i, (&w, row)) in labels.iter().zip(pool.chunks_exact(dim)).enumerate() {
        let centroid: Vec<f64> = vocab.centroid(w).iter().map(|&v| v as f64).collect();
        members[w].push((kmeans::squared_distance(row, &centroid), i));
    }

    let v = vocab.vocab_size();
    let cols = 1 + per_word;
    let mut cells = vec![0.0f32; v * cols * dim];
    for (w, list) in members.iter_mut().enumerate() {
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let base = w * cols * dim;
        for (dst, &src) in cells[base..base + dim].iter_mut().zip(vocab.centroid(w)) {
            *dst = src.clamp(0.0, 1.0);
        }
        for (k, &(_, i)) in list.iter().take(per_word).enumerate() {
            let at = base + (k + 1) * dim;
            cells[at..at + dim].copy_from_slice(&pool[i * dim..(i + 1) * dim]);
        }
    }
    PatchMatrix::from_rows(p, c, (v, cols), cells)?.unpatchify()
}

/// Cuts an atlas back into `(word, column)` cells.
pub fn atlas_cells(atlas: &Image, patch_size: usize) -> Result<PatchMatrix> {
    patchify(atlas, patch_size)
}
