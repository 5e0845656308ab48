//! Bouncing-digit clips generated on the fly.

use std::f64::consts::TAU;

use rand::Rng;

use super::idx::{DigitBank, DIGIT_SIDE};
use crate::error::{Error, Result};
use crate::model::VideoClip;
use crate::tensor::Tensor;

pub const DIGITS_PER_CLIP: usize = 2;
pub const MIN_SPEED: f64 = 2.0;
pub const MAX_SPEED: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MovingMnistConfig {
    pub image_size: usize,
    pub clip_len: usize,
}

impl Default for MovingMnistConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            clip_len: 5,
        }
    }
}

/// Path of one digit: top-left corner per frame, in real pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitTrack {
    pub digit: usize,
    pub positions: Vec<(f64, f64)>,
}

/// Advance one coordinate and mirror it back into `[0, hi]`.
pub fn reflect_step(pos: f64, vel: f64, hi: f64) -> (f64, f64) {
    let (mut p, mut v) = (pos + vel, vel);
    if hi <= 0.0 {
        return (0.0, v);
    }
    while !(0.0..=hi).contains(&p) {
        if p > hi {
            p = 2.0 * hi - p;
        } else {
            p = -p;
        }
        v = -v;
    }
    (p, v)
}

#[derive(Clone, Debug)]
pub struct MovingMnist {
    bank: DigitBank,
    config: MovingMnistConfig,
    seed: u64,
}

impl MovingMnist {
    pub fn new(bank: DigitBank, config: MovingMnistConfig, seed: u64) -> Result<Self> {
        if config.image_size < DIGIT_SIDE {
            return Err(Error::Config(format!(
                "moving MNIST frames must be at least {DIGIT_SIDE} pixels, got {}",
                config.image_size
            )));
        }
        if config.clip_len == 0 {
            return Err(Error::Config("clip_len must be positive".into()));
        }
        Ok(Self { bank, config, seed })
    }

    pub fn config(&self) -> &MovingMnistConfig {
        &self.config
    }

    pub fn bank(&self) -> &DigitBank {
        &self.bank
    }

    /// Largest valid top-left coordinate.
    fn bound(&self) -> f64 {
        (self.config.image_size - DIGIT_SIDE) as f64
    }

    pub fn tracks(&self, index: u64) -> Vec<DigitTrack> {
        let mut rng = crate::rng::stream(self.seed, &[index]);
        let hi = self.bound();
        (0..DIGITS_PER_CLIP)
            .map(|_| {
                let digit = rng.random_range(0..self.bank.len());
                let mut p = (rng.random_range(0.0..=hi), rng.random_range(0.0..=hi));
                let speed = rng.random_range(MIN_SPEED..=MAX_SPEED);
                let angle = rng.random_range(0.0..TAU);
                let mut v = (speed * angle.cos(), speed * angle.sin());
                let mut positions = Vec::with_capacity(self.config.clip_len);
                for _ in 0..self.config.clip_len {
                    positions.push(p);
                    let (x, vx) = reflect_step(p.0, v.0, hi);
                    let (y, vy) = reflect_step(p.1, v.1, hi);
                    p = (x, y);
                    v = (vx, vy);
                }
                DigitTrack { digit, positions }
            })
            .collect()
    }

    /// One digit placed at `pos` by bilinear splatting; mass-preserving.
    pub fn render_digit(&self, digit: usize, pos: (f64, f64)) -> Vec<f32> {
        let s = self.config.image_size;
        let mut out = vec![0.0f32; s * s];
        let (ix, iy) = (pos.0.floor() as usize, pos.1.floor() as usize);
        let (fx, fy) = ((pos.0 - ix as f64) as f32, (pos.1 - iy as f64) as f32);
        let taps = [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ];
        let img = self.bank.image(digit);
        for r in 0..DIGIT_SIDE {
            for c in 0..DIGIT_SIDE {
                let v = img[r * DIGIT_SIDE + c];
                if v == 0.0 {
                    continue;
                }
                for &(dx, dy, w) in &taps {
                    if w == 0.0 {
                        continue;
                    }
                    out[(iy + r + dy) * s + ix + c + dx] += w * v;
                }
            }
        }
        out
    }

    /// Per-digit layers of every frame: `[digit][frame][pixel]`.
    pub fn layers(&self, index: u64) -> Vec<Vec<Vec<f32>>> {
        self.tracks(index)
            .iter()
            .map(|t| t.positions.iter().map(|&p| self.render_digit(t.digit, p)).collect())
            .collect()
    }

    /// Clip `index`: digits composited by per-pixel max.
    pub fn clip(&self, index: u64) -> VideoClip<f32> {
        let s = self.config.image_size;
        let layers = self.layers(index);
        let mut frames = vec![0.0f32; self.config.clip_len * s * s];
        for layer in &layers {
            for (t, frame) in layer.iter().enumerate() {
                let dst = &mut frames[t * s * s..(t + 1) * s * s];
                for (d, &v) in dst.iter_mut().zip(frame) {
                    *d = d.max(v.min(1.0));
                }
            }
        }
        let frames = Tensor::new([self.config.clip_len, 1, s, s], frames).expect("consistent extents");
        VideoClip::new(frames).expect("four axes")
    }
}
