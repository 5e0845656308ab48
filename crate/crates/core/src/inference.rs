//! Recursive midpoint completion and diverse sampling.
//!
//! A clip of length `T` is filled by generating the frame at
//! `floor((t1 + t2) / 2)` for the interval `(0, T-1)`, then recursing into the
//! left half before the right half until every gap is one frame wide. That
//! takes exactly `T - 2` generator passes.

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{generator_on_tape, ModelConfig, ModelParams, VideoClip};
use crate::params::Bound;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(t1, mid, t2)` for every pass, in execution order.
pub fn recursion_order(clip_len: usize) -> Vec<(usize, usize, usize)> {
    fn visit(t1: usize, t2: usize, out: &mut Vec<(usize, usize, usize)>) {
        if t2 - t1 < 2 {
            return;
        }
        let mid = (t1 + t2) / 2;
        out.push((t1, mid, t2));
        visit(t1, mid, out);
        visit(mid, t2, out);
    }
    let mut out = Vec::new();
    if clip_len >= 2 {
        visit(0, clip_len - 1, &mut out);
    }
    out
}

/// Latent codes for one batched completion.
#[derive(Clone, Copy, Debug)]
pub enum LatentVars<'a> {
    /// One `[N, Dz]` code reused by every pass.
    Shared(Var),
    /// One `[N, Dz]` code per pass, in [`recursion_order`].
    PerPass(&'a [Var]),
}

/// Frames of a batched completion, each `[N, C, H, W]`, plus the passes run.
#[derive(Clone, Debug)]
pub struct CompletionVars {
    pub frames: Vec<Var>,
    pub passes: Vec<(usize, usize, usize)>,
}

impl CompletionVars {
    /// Frames as one `[N, T, C, H, W]` node.
    pub fn stacked<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Var> {
        let s = tape.shape(self.frames[0]).to_vec();
        let joined = tape.concat_channels(&self.frames)?;
        tape.reshape(joined, [s[0], self.frames.len(), s[1], s[2], s[3]])
    }
}

/// Batched recursive completion on `tape`. The end frame is reused as is.
pub fn complete_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &ModelConfig,
    g: &Bound,
    f_start: Var,
    f_end: Var,
    clip_len: usize,
    latents: LatentVars<'_>,
) -> Result<CompletionVars> {
    if clip_len < 3 {
        return Err(Error::InvalidArgument(format!("clip length must be at least 3, got {clip_len}")));
    }
    let order = recursion_order(clip_len);
    if let LatentVars::PerPass(zs) = latents {
        if zs.len() != order.len() {
            return Err(Error::InvalidArgument(format!(
                "{} latents for {} passes",
                zs.len(),
                order.len()
            )));
        }
    }
    let mut frames: Vec<Option<Var>> = vec![None; clip_len];
    frames[0] = Some(f_start);
    frames[clip_len - 1] = Some(f_end);
    let mut passes = Vec::with_capacity(order.len());
    for (k, &(t1, mid, t2)) in order.iter().enumerate() {
        let z = match latents {
            LatentVars::Shared(z) => z,
            LatentVars::PerPass(zs) => zs[k],
        };
        let (a, b) = (frames[t1].expect("left end ready"), frames[t2].expect("right end ready"));
        let pass = generator_on_tape(tape, cfg, g, a, b, z)?;
        frames[mid] = Some(pass.frame);
        passes.push((t1, mid, t2));
    }
    Ok(CompletionVars {
        frames: frames.into_iter().map(|f| f.expect("all frames filled")).collect(),
        passes,
    })
}

/// Latent codes for a single completion.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentSource<S> {
    Shared(Tensor<S>),
    PerPass(Vec<Tensor<S>>),
}

impl<S: Scalar> LatentSource<S> {
    /// Standard-normal codes from `rng`.
    pub fn sample<R: rand::Rng + ?Sized>(dim: usize, passes: usize, per_pass: bool, rng: &mut R) -> Self {
        let mut draw = || {
            Tensor::from_fn([dim], |_| {
                let v: f64 = StandardNormal.sample(rng);
                S::of(v)
            })
        };
        if per_pass {
            LatentSource::PerPass((0..passes).map(|_| draw()).collect())
        } else {
            LatentSource::Shared(draw())
        }
    }
}

/// A completed clip and the passes that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion<S> {
    pub clip: VideoClip<S>,
    pub passes: Vec<(usize, usize, usize)>,
}

fn batch1<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(shape).expect("same element count")
}

/// Complete a clip from its two end frames, recording every pass.
pub fn complete_sequence_traced<S: Scalar>(
    params: &ModelParams<S>,
    f_start: &Tensor<S>,
    f_end: &Tensor<S>,
    clip_len: usize,
    latents: &LatentSource<S>,
) -> Result<Completion<S>> {
    let cfg = &params.config;
    if f_start.shape() != cfg.frame_shape() || f_end.shape() != cfg.frame_shape() {
        return Err(Error::shape(
            "complete_sequence",
            format!(
                "frames must be {:?}, got {:?} and {:?}",
                cfg.frame_shape(),
                f_start.shape(),
                f_end.shape()
            ),
        ));
    }
    let check = |z: &Tensor<S>| {
        if z.shape() == [cfg.latent_dim] {
            Ok(())
        } else {
            Err(Error::shape(
                "complete_sequence",
                format!("latent must be [{}], got {:?}", cfg.latent_dim, z.shape()),
            ))
        }
    };
    let mut tape = Tape::new();
    let g = params.generator.bind(&mut tape, false);
    let a = tape.constant(batch1(f_start));
    let b = tape.constant(batch1(f_end));
    let zs: Vec<Var> = match latents {
        LatentSource::Shared(z) => {
            check(z)?;
            vec![tape.constant(batch1(z))]
        }
        LatentSource::PerPass(zs) => {
            for z in zs {
                check(z)?;
            }
            zs.iter().map(|z| tape.constant(batch1(z))).collect()
        }
    };
    let lv = match latents {
        LatentSource::Shared(_) => LatentVars::Shared(zs[0]),
        LatentSource::PerPass(_) => LatentVars::PerPass(&zs),
    };
    let out = complete_on_tape(&mut tape, cfg, &g, a, b, clip_len, lv)?;
    let mut frames: Vec<Tensor<S>> = out
        .frames
        .iter()
        .map(|&v| {
            let t = tape.tensor(v);
            let shape = t.shape()[1..].to_vec();
            t.reshape(shape).expect("batch of one")
        })
        .collect();
    // Endpoints are the inputs themselves, not a round trip through the tape.
    frames[0] = f_start.clone();
    frames[clip_len - 1] = f_end.clone();
    Ok(Completion {
        clip: VideoClip::from_frames(&frames)?,
        passes: out.passes,
    })
}

pub fn complete_sequence<S: Scalar>(
    params: &ModelParams<S>,
    f_start: &Tensor<S>,
    f_end: &Tensor<S>,
    clip_len: usize,
    latents: &LatentSource<S>,
) -> Result<VideoClip<S>> {
    Ok(complete_sequence_traced(params, f_start, f_end, clip_len, latents)?.clip)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionRequest<S> {
    pub f_start: Tensor<S>,
    pub f_end: Tensor<S>,
    pub clip_len: usize,
    pub samples: usize,
    pub base_seed: u64,
    /// Draw a fresh latent for each pass instead of one per completion.
    pub per_pass_latent: bool,
}

impl<S: Scalar> CompletionRequest<S> {
    pub fn new(f_start: Tensor<S>, f_end: Tensor<S>, samples: usize, base_seed: u64) -> Self {
        Self {
            f_start,
            f_end,
            clip_len: 5,
            samples,
            base_seed,
            per_pass_latent: false,
        }
    }

    /// Latents of sample `j`; independent of how many samples are requested.
    pub fn latents(&self, latent_dim: usize, j: usize) -> LatentSource<S> {
        let mut rng = crate::rng::stream(self.base_seed, &[j as u64]);
        LatentSource::sample(latent_dim, self.clip_len.saturating_sub(2), self.per_pass_latent, &mut rng)
    }
}

pub fn sample_diverse_completions<S: Scalar>(
    params: &ModelParams<S>,
    request: &CompletionRequest<S>,
) -> Result<Vec<VideoClip<S>>> {
    if request.samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    if request.clip_len < 3 {
        return Err(Error::InvalidArgument(format!(
            "clip length must be at least 3, got {}",
            request.clip_len
        )));
    }
    (0..request.samples)
        .map(|j| {
            let z = request.latents(params.config.latent_dim, j);
            complete_sequence(params, &request.f_start, &request.f_end, request.clip_len, &z)
        })
        .collect()
}

/// Mean over unordered pairs of the RMS difference of interior frames:
/// `sqrt(Σ (a - b)² / K)` with `K = (T - 2)·C·H·W`.
pub fn diversity_score<S: Scalar>(clips: &[VideoClip<S>]) -> Result<f64> {
    if clips.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "diversity needs at least 2 clips, got {}",
            clips.len()
        )));
    }
    let shape = clips[0].frames().shape();
    if let Some(bad) = clips.iter().find(|c| c.frames().shape() != shape) {
        return Err(Error::shape(
            "diversity_score",
            format!("clip shape {:?} differs from {shape:?}", bad.frames().shape()),
        ));
    }
    if shape[0] < 3 {
        return Err(Error::InvalidArgument("clips have no interior frames".into()));
    }
    let per_frame = clips[0].frames().numel() / shape[0];
    let interior = per_frame..per_frame * (shape[0] - 1);
    let k = interior.len() as f64;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..clips.len() {
        for j in i + 1..clips.len() {
            let a = &clips[i].frames().data()[interior.clone()];
            let b = &clips[j].frames().data()[interior.clone()];
            let ss: f64 = a.iter().zip(b).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
            total += (ss / k).sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
