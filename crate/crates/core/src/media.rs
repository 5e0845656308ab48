//! PNG and GIF export of frames and clips.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, DynamicImage, Frame, GrayImage, RgbImage, RgbaImage};

use crate::error::{Error, Result};
use crate::model::VideoClip;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GIF_FRAME_MS: u32 = 150;

fn to_byte<S: Scalar>(v: S) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[C, H, W]` with `C` of 1 or 3 → 8-bit image.
pub fn frame_to_image<S: Scalar>(frame: &Tensor<S>) -> Result<DynamicImage> {
    let &[c, h, w] = frame.shape() else {
        return Err(Error::shape("frame_to_image", format!("expected [C, H, W], got {:?}", frame.shape())));
    };
    let plane = h * w;
    let d = frame.data();
    match c {
        1 => {
            let buf = d.iter().map(|&v| to_byte(v)).collect();
            Ok(DynamicImage::ImageLuma8(
                GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer matches extents"),
            ))
        }
        3 => {
            let mut buf = Vec::with_capacity(3 * plane);
            for k in 0..plane {
                for ch in 0..3 {
                    buf.push(to_byte(d[ch * plane + k]));
                }
            }
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches extents"),
            ))
        }
        _ => Err(Error::shape("frame_to_image", format!("need 1 or 3 channels, got {c}"))),
    }
}

/// Grayscale images load as one channel, everything else as RGB.
pub fn image_to_frame<S: Scalar>(img: &DynamicImage) -> Tensor<S> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let g = img.to_luma8();
        Tensor::new([1, h, w], g.as_raw().iter().map(|&b| S::of(b as f64 / 255.0)).collect())
            .expect("buffer matches extents")
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        Tensor::from_fn([3, h, w], |i| {
            let (ch, k) = (i / (h * w), i % (h * w));
            S::of(raw[k * 3 + ch] as f64 / 255.0)
        })
    }
}

pub fn save_png<S: Scalar>(path: impl AsRef<Path>, frame: &Tensor<S>) -> Result<()> {
    let path = path.as_ref();
    frame_to_image(frame)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

pub fn load_png<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(image_to_frame(&img))
}

fn to_rgba<S: Scalar>(frame: &Tensor<S>) -> Result<RgbaImage> {
    Ok(frame_to_image(frame)?.to_rgba8())
}

/// Looping animated GIF, one frame per clip frame.
pub fn save_gif<S: Scalar>(path: impl AsRef<Path>, clip: &VideoClip<S>, frame_ms: u32) -> Result<()> {
    let path = path.as_ref();
    let img_err = |e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GifEncoder::new_with_speed(BufWriter::new(file), 10);
    enc.set_repeat(Repeat::Infinite).map_err(img_err)?;
    for t in 0..clip.len() {
        let frame = Frame::from_parts(
            to_rgba(&clip.frame(t))?,
            0,
            0,
            Delay::from_numer_denom_ms(frame_ms, 1),
        );
        enc.encode_frame(frame).map_err(img_err)?;
    }
    Ok(())
}

/// Clips as rows of frames, separated by a 1-pixel gray gutter.
pub fn clip_grid<S: Scalar>(clips: &[VideoClip<S>]) -> Result<RgbImage> {
    let first = clips
        .first()
        .ok_or_else(|| Error::InvalidArgument("no clips to tile".into()))?;
    let [_, h, w] = first.frame_shape();
    let cols = first.len();
    let gap = 1;
    let (gw, gh) = (cols * (w + gap) + gap, clips.len() * (h + gap) + gap);
    let mut grid = RgbImage::from_pixel(gw as u32, gh as u32, image::Rgb([96, 96, 96]));
    for (r, clip) in clips.iter().enumerate() {
        if clip.frame_shape() != first.frame_shape() || clip.len() != cols {
            return Err(Error::shape("clip_grid", "clips differ in shape"));
        }
        for t in 0..cols {
            let tile = frame_to_image(&clip.frame(t))?.to_rgb8();
            let (x0, y0) = (gap + t * (w + gap), gap + r * (h + gap));
            for (x, y, px) in tile.enumerate_pixels() {
                grid.put_pixel(x0 as u32 + x, y0 as u32 + y, *px);
            }
        }
    }
    Ok(grid)
}

pub fn save_clip_grid<S: Scalar>(path: impl AsRef<Path>, clips: &[VideoClip<S>]) -> Result<()> {
    let path = path.as_ref();
    clip_grid(clips)?.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `clip{index:06}_f{t}.png` for every frame; returns the written paths.
pub fn export_clip<S: Scalar>(dir: impl AsRef<Path>, index: u64, clip: &VideoClip<S>) -> Result<Vec<PathBuf>> {
    (0..clip.len())
        .map(|t| {
            let path = dir.as_ref().join(format!("clip{index:06}_f{t}.png"));
            save_png(&path, &clip.frame(t))?;
            Ok(path)
        })
        .collect()
}
