//! IDX image files (the MNIST distribution format).

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
pub const DIGIT_SIDE: usize = 28;
pub const DIGIT_PIXELS: usize = DIGIT_SIDE * DIGIT_SIDE;
const HEADER_LEN: usize = 16;

/// 28×28 grayscale digits with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitBank {
    images: Vec<Vec<f32>>,
    /// Where the digits came from, e.g. the file name.
    pub source: String,
}

impl DigitBank {
    pub fn new(images: Vec<Vec<f32>>, source: impl Into<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("digit bank is empty".into()));
        }
        for (i, img) in images.iter().enumerate() {
            if img.len() != DIGIT_PIXELS {
                return Err(Error::shape(
                    "digit_bank",
                    format!("image {i} has {} pixels, expected {DIGIT_PIXELS}", img.len()),
                ));
            }
            if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("image {i} has values outside [0, 1]")));
            }
        }
        Ok(Self {
            images,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Row-major 28×28 pixels.
    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i]
    }

    /// Procedural stroke glyphs, for tests and offline runs.
    pub fn synthetic(count: usize, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, &[0x1d_0000]);
        let images = (0..count.max(1))
            .map(|_| glyph_bytes(&mut rng).iter().map(|&b| b as f32 / 255.0).collect())
            .collect();
        Self {
            images,
            source: format!("synthetic({seed})"),
        }
    }
}

/// A random polyline of 2 to 4 thick strokes inside the central 20×20 box,
/// roughly the footprint of an MNIST digit.
pub fn glyph_bytes<R: Rng + ?Sized>(rng: &mut R) -> [u8; DIGIT_PIXELS] {
    let mut img = [0u8; DIGIT_PIXELS];
    let strokes = rng.random_range(2..=4);
    let mut p = (rng.random_range(6.0..22.0), rng.random_range(6.0..22.0));
    let radius: f64 = rng.random_range(1.2..2.2);
    for _ in 0..strokes {
        let q: (f64, f64) = (rng.random_range(6.0..22.0), rng.random_range(6.0..22.0));
        for r in 0..DIGIT_SIDE {
            for c in 0..DIGIT_SIDE {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let (dx, dy) = (q.0 - p.0, q.1 - p.1);
                let len2 = (dx * dx + dy * dy).max(1e-9);
                let s = (((x - p.0) * dx + (y - p.1) * dy) / len2).clamp(0.0, 1.0);
                let d = ((x - p.0 - s * dx).powi(2) + (y - p.1 - s * dy).powi(2)).sqrt();
                // one pixel of soft edge
                let v = (radius + 0.5 - d).clamp(0.0, 1.0);
                let b = (v * 255.0).round() as u8;
                let px = &mut img[r * DIGIT_SIDE + c];
                *px = (*px).max(b);
            }
        }
        p = q;
    }
    img
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parse an IDX image file already read into memory.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<DigitBank> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, format!("{} bytes is too short for an IDX header", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGES_MAGIC {
        let hint = if magic == LABELS_MAGIC { " (this is a label file)" } else { "" };
        return Err(Error::format(
            path,
            format!("magic {magic}, expected {IMAGES_MAGIC} for IDX images{hint}"),
        ));
    }
    let (count, rows, cols) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    if (rows, cols) != (DIGIT_SIDE, DIGIT_SIDE) {
        return Err(Error::format(path, format!("images are {rows}x{cols}, expected 28x28")));
    }
    let expected = HEADER_LEN + count * DIGIT_PIXELS;
    if bytes.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated: header promises {count} images ({expected} bytes), file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after {count} images", bytes.len() - expected),
        ));
    }
    if count == 0 {
        return Err(Error::format(path, "file holds no images"));
    }
    let images = bytes[HEADER_LEN..]
        .chunks_exact(DIGIT_PIXELS)
        .map(|img| img.iter().map(|&b| b as f32 / 255.0).collect())
        .collect();
    Ok(DigitBank {
        images,
        source: path.display().to_string(),
    })
}

pub fn load_mnist_idx(path: impl AsRef<Path>) -> Result<DigitBank> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, path)
}

/// Encode 28×28 byte images as an IDX image file.
pub fn encode_idx_images(images: &[[u8; DIGIT_PIXELS]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + images.len() * DIGIT_PIXELS);
    for v in [IMAGES_MAGIC, images.len() as u32, DIGIT_SIDE as u32, DIGIT_SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

/// Write `count` synthetic glyphs as an IDX image file with the standard
/// header layout.
pub fn write_synthetic_idx(path: impl AsRef<Path>, count: usize, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let mut rng = crate::rng::stream(seed, &[0x1d_0001]);
    // Reuse a small pool of glyphs so large files stay cheap to build.
    let pool: Vec<[u8; DIGIT_PIXELS]> = (0..count.clamp(1, 512)).map(|_| glyph_bytes(&mut rng)).collect();
    let mut out = Vec::with_capacity(HEADER_LEN + count * DIGIT_PIXELS);
    for v in [IMAGES_MAGIC, count as u32, DIGIT_SIDE as u32, DIGIT_SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..count {
        out.extend_from_slice(&pool[i % pool.len()]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
