//! Images in the unit interval and their patch lattices.
//!
//! Pixels are stored row-major with channels interleaved. A [`PatchMatrix`]
//! holds one flattened `P x P x C` block per row; blocks are numbered in
//! reading order over the patch lattice and flattened row-major within the
//! block with channels innermost.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"VWTI";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension ({height}x{width})"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// An image filled with one color; `color` must have 1 or 3 entries.
    pub fn filled(height: usize, width: usize, color: &[f32]) -> Result<Self> {
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(height * width * color.len())
            .collect();
        Image::new(height, width, color.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Quantizes to 8 bits per channel, expanding grayscale to RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width * 3);
        for px in self.data.chunks_exact(self.channels) {
            if self.channels == 1 {
                let q = quantize(px[0]);
                out.extend_from_slice(&[q, q, q]);
            } else {
                out.extend(px.iter().map(|&v| quantize(v)));
            }
        }
        out
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads PNG, JPEG, PNM or the raw `VWTI` container, scaling into `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(RAW_MAGIC) {
        return decode_raw(bytes);
    }
    let format = image::guess_format(bytes)
        .map_err(|_| Error::UnsupportedFormat("unrecognized file signature".into()))?;
    if !matches!(
        format,
        ImageFormat::Png | ImageFormat::Jpeg | ImageFormat::Pnm
    ) {
        return Err(Error::UnsupportedFormat(format!("{format:?}")));
    }
    let dynamic = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    from_dynamic(dynamic)
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data) = if img.color().has_color() {
        (3, img.to_rgb32f().into_raw())
    } else {
        (1, img.to_luma32f().into_raw())
    };
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Image::new(h, w, channels, data)
}

/// Writes by extension: `.ppm` (binary P6), `.png`, or `.vwti` (raw).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "ppm" => encode_ppm(img),
        "png" => encode_png(img)?,
        "vwti" | "raw" => encode_raw(img),
        other => return Err(Error::UnsupportedFormat(format!("extension {other:?}"))),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_rgb8());
    out
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    let (w, h) = (img.width as u32, img.height as u32);
    let encoded = if img.channels == 1 {
        let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        image::GrayImage::from_raw(w, h, raw)
            .map(DynamicImage::ImageLuma8)
            .expect("buffer sized from image dimensions")
            .write_to(&mut out, ImageFormat::Png)
    } else {
        image::RgbImage::from_raw(w, h, img.to_rgb8())
            .map(DynamicImage::ImageRgb8)
            .expect("buffer sized from image dimensions")
            .write_to(&mut out, ImageFormat::Png)
    };
    encoded.map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_raw(img: &Image) -> Vec<u8> {
    let mut w = ByteWriter::with_magic(RAW_MAGIC);
    w.u32(img.height as u32);
    w.u32(img.width as u32);
    w.u32(img.channels as u32);
    w.f32s(&img.data);
    w.into_bytes()
}

pub fn decode_raw(bytes: &[u8]) -> Result<Image> {
    let mut r = ByteReader::open(bytes, RAW_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Corrupt("raw image dimensions overflow".into()))?;
    let data = r.f32s(count)?;
    r.finish()?;
    Image::new(h, w, c, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            other => Err(Error::InvalidConfig(format!("unknown resize mode {other:?}"))),
        }
    }
}

/// Per-axis sampling positions under half-pixel (align-corners = false)
/// geometry: `(low index, high index, weight of high)`.
fn axis_taps(input: usize, output: usize, mode: ResizeMode) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| match mode {
            ResizeMode::Nearest => {
                let s = (((d as f64) + 0.5) * scale).floor() as usize;
                let s = s.min(input - 1);
                (s, s, 0.0)
            }
            ResizeMode::Bilinear => {
                let s = (((d as f64) + 0.5) * scale - 0.5).max(0.0);
                let lo = (s.floor() as usize).min(input - 1);
                let hi = (lo + 1).min(input - 1);
                (lo, hi, (s - lo as f64) as f32)
            }
        })
        .collect()
}

pub fn resize(img: &Image, target: (usize, usize), mode: ResizeMode) -> Result<Image> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize target {th}x{tw} has a zero dimension"
        )));
    }
    let ys = axis_taps(img.height, th, mode);
    let xs = axis_taps(img.width, tw, mode);
    let c = img.channels;
    let mut data = Vec::with_capacity(th * tw * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |y: usize, x: usize| img.data[(y * img.width + x) * c + ch];
                let v = match mode {
                    ResizeMode::Nearest => at(y0, x0),
                    ResizeMode::Bilinear => {
                        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
                    }
                };
                data.push(v);
            }
        }
    }
    Image::new(th, tw, c, data)
}

/// Flattened patches of one image, one row per lattice position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    patch_size: usize,
    channels: usize,
    grid: (usize, usize),
    data: Vec<f32>,
}

impl PatchMatrix {
    /// Wraps pre-flattened rows. `data.len()` must be `rows * cols * P * P * C`.
    pub fn from_rows(
        patch_size: usize,
        channels: usize,
        grid: (usize, usize),
        data: Vec<f32>,
    ) -> Result<Self> {
        if patch_size == 0 || channels == 0 {
            return Err(Error::InvalidConfig(
                "patch size and channel count must be positive".into(),
            ));
        }
        let expected = grid.0 * grid.1 * patch_size * patch_size * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(PatchMatrix {
            patch_size,
            channels,
            grid,
            data,
        })
    }

    /// A `1 x n` lattice of `dim`-length vectors (patch size 1, `dim` channels).
    pub fn from_vectors(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len(),
            });
        }
        let n = data.len() / dim;
        PatchMatrix::from_rows(1, dim, (1, n), data)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.patch_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.patch_dim())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let d = self.patch_dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    /// Lattice position `(row, col)` of patch `i`.
    pub fn position(&self, i: usize) -> (usize, usize) {
        (i / self.grid.1, i % self.grid.1)
    }

    /// Reassembles the image the patches were cut from.
    pub fn unpatchify(&self) -> Result<Image> {
        let p = self.patch_size;
        let c = self.channels;
        let (h, w) = (self.grid.0 * p, self.grid.1 * p);
        let mut data = vec![0.0f32; h * w * c];
        for (i, patch) in self.rows().enumerate() {
            let (br, bc) = self.position(i);
            for py in 0..p {
                let dst = ((br * p + py) * w + bc * p) * c;
                data[dst..dst + p * c].copy_from_slice(&patch[py * p * c..(py + 1) * p * c]);
            }
        }
        Image::new(h, w, c, data)
    }
}

pub fn patchify(img: &Image, patch_size: usize) -> Result<PatchMatrix> {
    let p = patch_size;
    if p == 0 || !img.height.is_multiple_of(p) || !img.width.is_multiple_of(p) {
        return Err(Error::NotDivisible {
            height: img.height,
            width: img.width,
            patch_size: p,
        });
    }
    let c = img.channels;
    let (rows, cols) = (img.height / p, img.width / p);
    let mut data = Vec::with_capacity(img.data.len());
    for br in 0..rows {
        for bc in 0..cols {
            for py in 0..p {
                let src = ((br * p + py) * img.width + bc * p) * c;
                data.extend_from_slice(&img.data[src..src + p * c]);
            }
        }
    }
    PatchMatrix::from_rows(p, c, (rows, cols), data)
}
