//! Single translating shapes on a black background.
//!
//! Circles move vertically, squares horizontally, triangles diagonally, at an
//! integer speed in `0..=5` pixels per frame. The whole path is kept inside
//! the frame, so every clip is a pure translation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VideoClip;
use crate::tensor::Tensor;

pub const MAX_SPEED: i64 = 5;
/// Object size range at 64×64; scaled with the frame.
pub const SIZE_RANGE_64: (usize, usize) = (10, 18);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesConfig {
    pub image_size: usize,
    pub clip_len: usize,
    /// Kinds drawn uniformly; all three by default.
    pub kinds: Vec<ShapeKind>,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            clip_len: 5,
            kinds: ShapeKind::ALL.to_vec(),
        }
    }
}

impl ShapesConfig {
    /// Inclusive size range for this frame extent.
    pub fn size_range(&self) -> (usize, usize) {
        let scale = |v: usize| ((v * self.image_size) as f64 / 64.0).round().max(2.0) as usize;
        (scale(SIZE_RANGE_64.0), scale(SIZE_RANGE_64.1))
    }
}

/// Everything needed to rasterize one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: [f32; 3],
    /// Side length or diameter in pixels.
    pub size: usize,
    /// Top-left corner of the bounding box at frame 0, `(col, row)`.
    pub start: (i64, i64),
    /// Pixels per frame, `(dcol, drow)`.
    pub velocity: (i64, i64),
}

impl ShapeSpec {
    pub fn position(&self, t: usize) -> (i64, i64) {
        (
            self.start.0 + self.velocity.0 * t as i64,
            self.start.1 + self.velocity.1 * t as i64,
        )
    }

    /// Whether the pixel at offset `(dc, dr)` inside the bounding box is set.
    pub fn covers(&self, dc: usize, dr: usize) -> bool {
        let s = self.size as f64;
        let (x, y) = (dc as f64 + 0.5, dr as f64 + 0.5);
        match self.kind {
            ShapeKind::Square => true,
            ShapeKind::Circle => {
                let r = s / 2.0;
                (x - r).powi(2) + (y - r).powi(2) <= r * r
            }
            // apex at the top centre, base along the bottom edge
            ShapeKind::Triangle => (x - s / 2.0).abs() <= y / 2.0,
        }
    }
}

/// Fully saturated color from a uniform hue.
fn saturated_color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    let h = rng.random_range(0.0..6.0f64);
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r as f32, g as f32, b as f32]
}

#[derive(Clone, Debug)]
pub struct Shapes2d {
    config: ShapesConfig,
    seed: u64,
}

impl Shapes2d {
    pub fn new(config: ShapesConfig, seed: u64) -> Result<Self> {
        if config.kinds.is_empty() {
            return Err(Error::Config("at least one shape kind is required".into()));
        }
        if config.clip_len == 0 {
            return Err(Error::Config("clip_len must be positive".into()));
        }
        let (_, hi) = config.size_range();
        if hi > config.image_size {
            return Err(Error::Config(format!("frame of {} pixels is too small for shapes", config.image_size)));
        }
        Ok(Self { config, seed })
    }

    pub fn config(&self) -> &ShapesConfig {
        &self.config
    }

    pub fn spec(&self, index: u64) -> ShapeSpec {
        let mut rng = crate::rng::stream(self.seed, &[index]);
        let kind = self.config.kinds[rng.random_range(0..self.config.kinds.len())];
        let color = saturated_color(&mut rng);
        let (lo, hi) = self.config.size_range();
        let size = rng.random_range(lo..=hi);
        let steps = self.config.clip_len as i64 - 1;
        let room = (self.config.image_size - size) as i64;
        // Redraw the speed until the path fits; zero always does.
        let velocity = loop {
            let speed = rng.random_range(0..=MAX_SPEED);
            let sign = |rng: &mut rand_chacha::ChaCha8Rng| if rng.random_bool(0.5) { 1 } else { -1 };
            let v = match kind {
                ShapeKind::Circle => (0, sign(&mut rng) * speed),
                ShapeKind::Square => (sign(&mut rng) * speed, 0),
                ShapeKind::Triangle => (sign(&mut rng) * speed, sign(&mut rng) * speed),
            };
            if v.0.abs() * steps <= room && v.1.abs() * steps <= room {
                break v;
            }
        };
        let axis = |rng: &mut rand_chacha::ChaCha8Rng, v: i64| {
            let lo = (-v * steps).max(0);
            let hi = room.min(room - v * steps);
            rng.random_range(lo..=hi)
        };
        let start = (axis(&mut rng, velocity.0), axis(&mut rng, velocity.1));
        ShapeSpec {
            kind,
            color,
            size,
            start,
            velocity,
        }
    }

    pub fn render(&self, spec: &ShapeSpec) -> VideoClip<f32> {
        let s = self.config.image_size;
        let len = self.config.clip_len;
        let mut data = vec![0.0f32; len * 3 * s * s];
        for t in 0..len {
            let (c0, r0) = spec.position(t);
            for dr in 0..spec.size {
                for dc in 0..spec.size {
                    if !spec.covers(dc, dr) {
                        continue;
                    }
                    let (r, c) = ((r0 + dr as i64) as usize, (c0 + dc as i64) as usize);
                    for (ch, &v) in spec.color.iter().enumerate() {
                        data[((t * 3 + ch) * s + r) * s + c] = v;
                    }
                }
            }
        }
        VideoClip::new(Tensor::new([len, 3, s, s], data).expect("consistent extents")).expect("four axes")
    }

    pub fn clip(&self, index: u64) -> VideoClip<f32> {
        self.render(&self.spec(index))
    }
}

/// Intensity-weighted centroid `(row, col)` of a `[C, H, W]` frame, or
/// `None` for a blank frame.
pub fn centroid(frame: &Tensor<f32>) -> Option<(f64, f64)> {
    let &[c, h, w] = frame.shape() else {
        return None;
    };
    let (mut m, mut sr, mut sc) = (0.0f64, 0.0f64, 0.0f64);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                let v = frame.data()[(ch * h + r) * w + col] as f64;
                m += v;
                sr += v * r as f64;
                sc += v * col as f64;
            }
        }
    }
    (m > 0.0).then(|| (sr / m, sc / m))
}

/// Check the per-kind motion rule on rasterized centroids.
pub fn motion_oracle(kind: ShapeKind, clip: &VideoClip<f32>, tolerance: f64) -> std::result::Result<(), String> {
    let cents: Vec<(f64, f64)> = (0..clip.len())
        .map(|t| centroid(&clip.frame(t)).ok_or_else(|| format!("frame {t} is blank")))
        .collect::<std::result::Result<_, _>>()?;
    for (t, pair) in cents.windows(2).enumerate() {
        let (dr, dc) = (pair[1].0 - pair[0].0, pair[1].1 - pair[0].1);
        let ok = match kind {
            ShapeKind::Circle => dc.abs() <= tolerance,
            ShapeKind::Square => dr.abs() <= tolerance,
            ShapeKind::Triangle => (dr.abs() - dc.abs()).abs() <= tolerance,
        };
        if !ok {
            return Err(format!("{kind:?} moved by (row {dr:.3}, col {dc:.3}) between frames {t} and {}", t + 1));
        }
    }
    Ok(())
}
