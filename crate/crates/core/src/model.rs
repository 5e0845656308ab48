//! Scenario encoder, transform head, mask decoder and critic.
//!
//! The generator maps `(f_start, f_end, z)` to one frame: the encoder reads
//! `f_start ⊕ (f_end − f_start)`, the code and `z` drive a dense head that
//! emits `P` affine transforms and a deconvolutional decoder that emits `P`
//! softmax masks, and the output is the masked merge of `f_start` warped by
//! each transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::merge::MaskStack;
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::warp::AffineTransform;

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PADDING: usize = 1;
const ENCODER_WIDTHS: [usize; 4] = [32, 64, 128, 256];
const DECODER_WIDTHS: [usize; 3] = [128, 64, 32];
const CRITIC_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const TRANSFORM_HIDDEN: usize = 256;
const IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Square frame extent; a multiple of 16.
    pub image_size: usize,
    pub channels: usize,
    /// Number of affine layers `P`, 1 to 8.
    pub transforms: usize,
    pub latent_dim: usize,
    pub code_dim: usize,
    /// Divides every convolutional width. 1 is the full network.
    pub width_divisor: usize,
    /// Frames per clip seen by the critic.
    pub clip_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            transforms: 4,
            latent_dim: 100,
            code_dim: 512,
            width_divisor: 1,
            clip_len: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return bad(format!("image_size must be a positive multiple of 16, got {}", self.image_size));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if !(1..=8).contains(&self.transforms) {
            return bad(format!("transforms must be in 1..=8, got {}", self.transforms));
        }
        if self.latent_dim == 0 || self.code_dim == 0 {
            return bad("latent_dim and code_dim must be positive".into());
        }
        if self.width_divisor == 0 || self.width_divisor > ENCODER_WIDTHS[0] {
            return bad(format!(
                "width_divisor must be in 1..={}, got {}",
                ENCODER_WIDTHS[0], self.width_divisor
            ));
        }
        if self.clip_len < 3 {
            return bad(format!("clip_len must be at least 3, got {}", self.clip_len));
        }
        Ok(())
    }

    fn width(&self, w: usize) -> usize {
        (w / self.width_divisor).max(1)
    }

    fn encoder_widths(&self) -> [usize; 4] {
        ENCODER_WIDTHS.map(|w| self.width(w))
    }

    fn decoder_widths(&self) -> [usize; 3] {
        DECODER_WIDTHS.map(|w| self.width(w))
    }

    fn critic_widths(&self) -> [usize; 4] {
        CRITIC_WIDTHS.map(|w| self.width(w))
    }

    /// Side of the 4-conv feature map.
    fn bottleneck(&self) -> usize {
        self.image_size / 16
    }

    /// Side of the decoder's first feature map.
    fn seed_side(&self) -> usize {
        self.image_size / 8
    }

    /// Encoder input channels: the start frame and the difference image.
    pub fn encoder_channels(&self) -> usize {
        2 * self.channels
    }

    pub fn critic_channels(&self) -> usize {
        self.clip_len * self.channels
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }
}

/// Generator and critic weights together with the architecture they fit.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub generator: ParamStore<S>,
    pub critic: ParamStore<S>,
}

fn he_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| S::of(rng.random_range(-bound..bound)))
}

fn add_conv<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    c_in: usize,
    c_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let w = he_uniform(&[c_out, c_in, KERNEL, KERNEL], c_in * KERNEL * KERNEL, rng);
    store.insert(format!("{name}.weight"), w)?;
    store.insert(format!("{name}.bias"), Tensor::zeros([c_out]))
}

fn add_deconv<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    c_in: usize,
    c_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    // Each output pixel of a stride-2, kernel-4 deconvolution sees 2x2 taps.
    let fan_in = c_in * (KERNEL / STRIDE) * (KERNEL / STRIDE);
    let w = he_uniform(&[c_in, c_out, KERNEL, KERNEL], fan_in, rng);
    store.insert(format!("{name}.weight"), w)?;
    store.insert(format!("{name}.bias"), Tensor::zeros([c_out]))
}

fn add_dense<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.insert(format!("{name}.weight"), he_uniform(&[d_out, d_in], d_in, rng))?;
    store.insert(format!("{name}.bias"), Tensor::zeros([d_out]))
}

/// Deterministic initialization. The final transform layer starts at zero
/// weights with an identity bias, so every transform is the identity.
pub fn init_params<S: Scalar>(seed: u64, config: &ModelConfig) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ParamStore::new();
    let enc = config.encoder_widths();
    let mut c_in = config.encoder_channels();
    for (i, &c) in enc.iter().enumerate() {
        add_conv(&mut g, &format!("encoder.conv{}", i + 1), c_in, c, &mut rng)?;
        c_in = c;
    }
    let flat = enc[3] * config.bottleneck() * config.bottleneck();
    add_dense(&mut g, "encoder.proj", flat, config.code_dim, &mut rng)?;

    let joint = config.code_dim + config.latent_dim;
    add_dense(&mut g, "transform.fc1", joint, TRANSFORM_HIDDEN, &mut rng)?;
    let p = config.transforms;
    g.insert("transform.fc2.weight", Tensor::zeros([6 * p, TRANSFORM_HIDDEN]))?;
    g.insert(
        "transform.fc2.bias",
        Tensor::from_fn([6 * p], |i| S::of(IDENTITY[i % 6])),
    )?;

    let dec = config.decoder_widths();
    let side = config.seed_side();
    add_dense(&mut g, "mask.proj", joint, dec[0] * side * side, &mut rng)?;
    add_deconv(&mut g, "mask.deconv1", dec[0], dec[1], &mut rng)?;
    add_deconv(&mut g, "mask.deconv2", dec[1], dec[2], &mut rng)?;
    add_deconv(&mut g, "mask.deconv3", dec[2], p, &mut rng)?;

    let mut d = ParamStore::new();
    let crit = config.critic_widths();
    let mut c_in = config.critic_channels();
    for (i, &c) in crit.iter().enumerate() {
        add_conv(&mut d, &format!("critic.conv{}", i + 1), c_in, c, &mut rng)?;
        c_in = c;
    }
    let flat = crit[3] * config.bottleneck() * config.bottleneck();
    add_dense(&mut d, "critic.head", flat, 1, &mut rng)?;

    Ok(ModelParams {
        config: config.clone(),
        generator: g,
        critic: d,
    })
}

// ---------------------------------------------------------------------------
// Batched graph construction.

fn conv<S: Scalar>(t: &mut Tape<S>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    t.conv2d(x, w, b, STRIDE, PADDING)
}

fn deconv<S: Scalar>(t: &mut Tape<S>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    t.conv_transpose2d(x, w, b, STRIDE, PADDING)
}

fn dense<S: Scalar>(t: &mut Tape<S>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    t.dense(x, w, b)
}

fn flatten<S: Scalar>(t: &mut Tape<S>, x: Var) -> Result<Var> {
    let n = t.shape(x)[0];
    let rest = t.value(x).len() / n;
    t.reshape(x, [n, rest])
}

fn four_convs<S: Scalar>(t: &mut Tape<S>, p: &Bound, prefix: &str, mut h: Var) -> Result<Var> {
    for i in 1..=4 {
        h = conv(t, p, &format!("{prefix}.conv{i}"), h)?;
        h = t.leaky_relu(h, LEAKY_SLOPE);
    }
    Ok(h)
}

fn check_frames<S: Scalar>(t: &Tape<S>, cfg: &ModelConfig, v: Var, what: &str) -> Result<usize> {
    let s = t.shape(v);
    let [c, h, w] = cfg.frame_shape();
    match *s {
        [n, sc, sh, sw] if (sc, sh, sw) == (c, h, w) => Ok(n),
        _ => Err(Error::shape(
            "generator",
            format!("{what} must be [N, {c}, {h}, {w}], got {s:?}"),
        )),
    }
}

/// `[N, C, H, W]` start and end frames → scenario codes `[N, Ds]`.
pub fn encode_on_tape<S: Scalar>(
    t: &mut Tape<S>,
    cfg: &ModelConfig,
    g: &Bound,
    f_start: Var,
    f_end: Var,
) -> Result<Var> {
    let n = check_frames(t, cfg, f_start, "f_start")?;
    if check_frames(t, cfg, f_end, "f_end")? != n {
        return Err(Error::shape("generator", "f_start and f_end batch sizes differ"));
    }
    let diff = t.sub(f_end, f_start)?;
    let x = t.concat_channels(&[f_start, diff])?;
    let h = four_convs(t, g, "encoder", x)?;
    let h = flatten(t, h)?;
    dense(t, g, "encoder.proj", h)
}

fn joint<S: Scalar>(t: &mut Tape<S>, cfg: &ModelConfig, code: Var, z: Var) -> Result<Var> {
    let n = t.shape(code)[0];
    if t.shape(z) != [n, cfg.latent_dim] {
        return Err(Error::shape(
            "generator",
            format!("latent must be [{n}, {}], got {:?}", cfg.latent_dim, t.shape(z)),
        ));
    }
    t.concat_channels(&[code, z])
}

/// Codes `[N, Ds]` and latents `[N, Dz]` → transform parameters `[N*P, 6]`.
pub fn transforms_on_tape<S: Scalar>(
    t: &mut Tape<S>,
    cfg: &ModelConfig,
    g: &Bound,
    code: Var,
    z: Var,
) -> Result<Var> {
    let n = t.shape(code)[0];
    let h = joint(t, cfg, code, z)?;
    let h = dense(t, g, "transform.fc1", h)?;
    let h = t.leaky_relu(h, LEAKY_SLOPE);
    let theta = dense(t, g, "transform.fc2", h)?;
    t.reshape(theta, [n * cfg.transforms, 6])
}

/// Codes and latents → softmax masks `[N, P, H, W]`.
pub fn masks_on_tape<S: Scalar>(
    t: &mut Tape<S>,
    cfg: &ModelConfig,
    g: &Bound,
    code: Var,
    z: Var,
) -> Result<Var> {
    let n = t.shape(code)[0];
    let h = joint(t, cfg, code, z)?;
    let h = dense(t, g, "mask.proj", h)?;
    let h = t.leaky_relu(h, LEAKY_SLOPE);
    let side = cfg.seed_side();
    let mut h = t.reshape(h, [n, cfg.decoder_widths()[0], side, side])?;
    for i in 1..=3 {
        h = deconv(t, g, &format!("mask.deconv{i}"), h)?;
        if i < 3 {
            h = t.leaky_relu(h, LEAKY_SLOPE);
        }
    }
    t.softmax_channels(h)
}

/// Intermediate handles of one generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorPass {
    pub code: Var,
    /// `[N*P, 6]`
    pub transforms: Var,
    /// `[N, P, H, W]`
    pub masks: Var,
    /// `[N*P, C, H, W]`
    pub warped: Var,
    /// `[N, C, H, W]`
    pub frame: Var,
}

/// One generator pass over a batch.
pub fn generator_on_tape<S: Scalar>(
    t: &mut Tape<S>,
    cfg: &ModelConfig,
    g: &Bound,
    f_start: Var,
    f_end: Var,
    z: Var,
) -> Result<GeneratorPass> {
    let code = encode_on_tape(t, cfg, g, f_start, f_end)?;
    let transforms = transforms_on_tape(t, cfg, g, code, z)?;
    let masks = masks_on_tape(t, cfg, g, code, z)?;
    let [_, _, h, w] = *t.shape(f_start) else { unreachable!() };
    let grid = t.affine_grid(transforms, h, w)?;
    let warped = t.bilinear_sample(f_start, grid)?;
    let frame = t.merge_masked(warped, masks)?;
    Ok(GeneratorPass {
        code,
        transforms,
        masks,
        warped,
        frame,
    })
}

/// Critic scores `[N, 1]` for clips `[N, T, C, H, W]`.
pub fn critic_on_tape<S: Scalar>(t: &mut Tape<S>, cfg: &ModelConfig, d: &Bound, clips: Var) -> Result<Var> {
    let s = t.shape(clips).to_vec();
    let [c, h, w] = cfg.frame_shape();
    let n = match s[..] {
        [n, len, sc, sh, sw] if (len, sc, sh, sw) == (cfg.clip_len, c, h, w) => n,
        _ => {
            return Err(Error::shape(
                "critic",
                format!("clips must be [N, {}, {c}, {h}, {w}], got {s:?}", cfg.clip_len),
            ))
        }
    };
    let x = t.reshape(clips, [n, cfg.critic_channels(), h, w])?;
    let x = four_convs(t, d, "critic", x)?;
    let x = flatten(t, x)?;
    dense(t, d, "critic.head", x)
}

// ---------------------------------------------------------------------------
// Single-sample API.

/// A clip `[T, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip<S> {
    frames: Tensor<S>,
}

impl<S: Scalar> VideoClip<S> {
    /// Values are clamped into `[0, 1]`.
    pub fn new(frames: Tensor<S>) -> Result<Self> {
        if frames.ndim() != 4 {
            return Err(Error::shape(
                "video_clip",
                format!("expected [T, C, H, W], got {:?}", frames.shape()),
            ));
        }
        let frames = frames.map(|v| v.max(S::zero()).min(S::one()));
        Ok(Self { frames })
    }

    pub fn from_frames(frames: &[Tensor<S>]) -> Result<Self> {
        Self::new(Tensor::stack(frames)?)
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        let s = self.frames.shape();
        [s[1], s[2], s[3]]
    }

    pub fn frame(&self, t: usize) -> Tensor<S> {
        self.frames.index_axis0(t).expect("frame index in range")
    }

    pub fn frames(&self) -> &Tensor<S> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<S> {
        self.frames
    }

    pub fn first(&self) -> Tensor<S> {
        self.frame(0)
    }

    pub fn last(&self) -> Tensor<S> {
        self.frame(self.len() - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorInput<S> {
    f_start: Tensor<S>,
    f_end: Tensor<S>,
    f_minus: Tensor<S>,
    z: Tensor<S>,
}

fn in_unit_range<S: Scalar>(t: &Tensor<S>) -> bool {
    t.data().iter().all(|&v| v >= S::zero() && v <= S::one())
}

/// Validate two frames and a latent and derive the difference image.
pub fn build_generator_input<S: Scalar>(
    f_start: &Tensor<S>,
    f_end: &Tensor<S>,
    z: &Tensor<S>,
) -> Result<GeneratorInput<S>> {
    if f_start.ndim() != 3 || f_start.shape() != f_end.shape() {
        return Err(Error::shape(
            "generator_input",
            format!(
                "frames must share a [C, H, W] shape, got {:?} and {:?}",
                f_start.shape(),
                f_end.shape()
            ),
        ));
    }
    if !in_unit_range(f_start) || !in_unit_range(f_end) {
        return Err(Error::InvalidArgument("frame values must lie in [0, 1]".into()));
    }
    if z.ndim() != 1 {
        return Err(Error::shape(
            "generator_input",
            format!("latent must be a vector, got {:?}", z.shape()),
        ));
    }
    let f_minus = Tensor::new(
        f_start.shape().to_vec(),
        f_end.data().iter().zip(f_start.data()).map(|(&e, &s)| e - s).collect(),
    )?;
    Ok(GeneratorInput {
        f_start: f_start.clone(),
        f_end: f_end.clone(),
        f_minus,
        z: z.clone(),
    })
}

impl<S: Scalar> GeneratorInput<S> {
    pub fn f_start(&self) -> &Tensor<S> {
        &self.f_start
    }

    pub fn f_end(&self) -> &Tensor<S> {
        &self.f_end
    }

    pub fn f_minus(&self) -> &Tensor<S> {
        &self.f_minus
    }

    pub fn z(&self) -> &Tensor<S> {
        &self.z
    }

    /// `f_start ⊕ f_minus` along channels, `[2C, H, W]`.
    pub fn encoder_input(&self) -> Tensor<S> {
        let mut data = self.f_start.data().to_vec();
        data.extend_from_slice(self.f_minus.data());
        let mut shape = self.f_start.shape().to_vec();
        shape[0] *= 2;
        Tensor::new(shape, data).expect("two equal frames")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioCode<S> {
    pub code: Tensor<S>,
}

fn batch1<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(shape).expect("same element count")
}

fn latent_var<S: Scalar>(tape: &mut Tape<S>, cfg: &ModelConfig, z: &Tensor<S>) -> Result<Var> {
    if z.shape() != [cfg.latent_dim] {
        return Err(Error::shape(
            "generator",
            format!("latent must be [{}], got {:?}", cfg.latent_dim, z.shape()),
        ));
    }
    Ok(tape.constant(batch1(z)))
}

fn code_var<S: Scalar>(tape: &mut Tape<S>, cfg: &ModelConfig, code: &ScenarioCode<S>) -> Result<Var> {
    if code.code.shape() != [cfg.code_dim] {
        return Err(Error::shape(
            "generator",
            format!("code must be [{}], got {:?}", cfg.code_dim, code.code.shape()),
        ));
    }
    Ok(tape.constant(batch1(&code.code)))
}

fn unbatch<S: Scalar>(tape: &Tape<S>, v: Var) -> Tensor<S> {
    let t = tape.tensor(v);
    let shape = t.shape()[1..].to_vec();
    t.reshape(shape).expect("leading axis of one")
}

pub fn encode_scenario<S: Scalar>(params: &ModelParams<S>, input: &GeneratorInput<S>) -> Result<ScenarioCode<S>> {
    let mut tape = Tape::new();
    let g = params.generator.bind(&mut tape, false);
    let fs = tape.constant(batch1(&input.f_start));
    let fe = tape.constant(batch1(&input.f_end));
    let code = encode_on_tape(&mut tape, &params.config, &g, fs, fe)?;
    Ok(ScenarioCode {
        code: unbatch(&tape, code),
    })
}

pub fn generate_transforms<S: Scalar>(
    params: &ModelParams<S>,
    code: &ScenarioCode<S>,
    z: &Tensor<S>,
) -> Result<Vec<AffineTransform<S>>> {
    let mut tape = Tape::new();
    let g = params.generator.bind(&mut tape, false);
    let c = code_var(&mut tape, &params.config, code)?;
    let zv = latent_var(&mut tape, &params.config, z)?;
    let theta = transforms_on_tape(&mut tape, &params.config, &g, c, zv)?;
    tape.value(theta)
        .chunks_exact(6)
        .map(|p| AffineTransform::new([p[0], p[1], p[2], p[3], p[4], p[5]]))
        .collect()
}

pub fn decode_masks<S: Scalar>(
    params: &ModelParams<S>,
    code: &ScenarioCode<S>,
    z: &Tensor<S>,
) -> Result<MaskStack<S>> {
    let mut tape = Tape::new();
    let g = params.generator.bind(&mut tape, false);
    let c = code_var(&mut tape, &params.config, code)?;
    let zv = latent_var(&mut tape, &params.config, z)?;
    let m = masks_on_tape(&mut tape, &params.config, &g, c, zv)?;
    MaskStack::new(unbatch(&tape, m))
}

/// One generator pass on a single pair of frames.
pub fn generate_midpoint_frame<S: Scalar>(
    params: &ModelParams<S>,
    f_start: &Tensor<S>,
    f_end: &Tensor<S>,
    z: &Tensor<S>,
) -> Result<Tensor<S>> {
    let input = build_generator_input(f_start, f_end, z)?;
    let mut tape = Tape::new();
    let g = params.generator.bind(&mut tape, false);
    let fs = tape.constant(batch1(&input.f_start));
    let fe = tape.constant(batch1(&input.f_end));
    let zv = latent_var(&mut tape, &params.config, &input.z)?;
    let pass = generator_on_tape(&mut tape, &params.config, &g, fs, fe, zv)?;
    Ok(unbatch(&tape, pass.frame))
}

pub fn criticize_clip<S: Scalar>(params: &ModelParams<S>, clip: &VideoClip<S>) -> Result<S> {
    let mut tape = Tape::new();
    let d = params.critic.bind(&mut tape, false);
    let x = tape.constant(batch1(clip.frames()));
    let score = critic_on_tape(&mut tape, &params.config, &d, x)?;
    Ok(tape.item(score))
}

/// Upper bound on `|critic(clip)|` for clips in `[0, 1]` once every critic
/// weight and bias satisfies `|w| ≤ clip`.
pub fn critic_output_bound(config: &ModelConfig, clip: f64) -> f64 {
    let mut bound = 1.0;
    let mut c_in = config.critic_channels();
    for c in config.critic_widths() {
        // leaky_relu never increases magnitude
        bound = clip * ((c_in * KERNEL * KERNEL) as f64 * bound + 1.0);
        c_in = c;
    }
    let flat = c_in * config.bottleneck() * config.bottleneck();
    clip * (flat as f64 * bound + 1.0)
}
