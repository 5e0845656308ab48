//! Wasserstein training with weight clipping.
//!
//! Each step runs `n_critic` critic updates followed by one generator update.
//! Fake clips are completed recursively from the real end frames, so the
//! critic always sees whole clips with real endpoints. Every random draw
//! comes from a stream keyed by `(seed, iteration, substep)` and every batch
//! is addressed by number, which makes a resumed run identical to an
//! uninterrupted one.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datasets::{Dataset, DatasetConfig, Split};
use crate::error::{Error, Result};
use crate::inference::{complete_on_tape, LatentVars};
use crate::model::{critic_on_tape, init_params, ModelConfig, ModelParams};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_c: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Fresh latent per recursion pass instead of one per clip.
    pub per_pass_latent: bool,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            clip_c: 0.01,
            n_critic: 5,
            batch_size: 32,
            iterations: 1000,
            seed: 0,
            per_pass_latent: false,
            model: ModelConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.clip_c.is_finite() && self.clip_c > 0.0) {
            return Err(Error::Config(format!("clip_c must be positive, got {}", self.clip_c)));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in 63 bits".into()));
        }
        if self.model.channels != self.dataset.kind.channels() {
            return Err(Error::Config(format!(
                "model.channels = {} but {:?} clips have {}",
                self.model.channels,
                self.dataset.kind,
                self.dataset.kind.channels()
            )));
        }
        self.model.validate()
    }
}

/// `loss_g = -mean(D(fake))`.
pub fn generator_loss<S: Scalar>(fake_scores: &[S]) -> Result<S> {
    if fake_scores.is_empty() {
        return Err(Error::InvalidArgument("generator loss of an empty batch".into()));
    }
    Ok(-mean(fake_scores))
}

/// `loss_d = mean(D(fake)) - mean(D(real))`.
pub fn critic_loss<S: Scalar>(fake_scores: &[S], real_scores: &[S]) -> Result<S> {
    if fake_scores.is_empty() || real_scores.is_empty() {
        return Err(Error::InvalidArgument("critic loss of an empty batch".into()));
    }
    Ok(mean(fake_scores) - mean(real_scores))
}

fn mean<S: Scalar>(v: &[S]) -> S {
    v.iter().copied().sum::<S>() / S::of(v.len() as f64)
}

/// Clamp every parameter of `critic` into `[-c, c]`.
pub fn clip_weights<S: Scalar>(critic: &mut ParamStore<S>, c: f64) {
    assert!(c > 0.0, "clip constant must be positive");
    let (lo, hi) = (S::of(-c), S::of(c));
    for (_, p) in critic.iter_mut() {
        for w in p.value.data_mut() {
            *w = w.max(lo).min(hi);
        }
    }
}

/// `s ← 0.9 s + 0.1 g²; w ← w − lr · g / √(s + ε)`.
pub fn rmsprop_update<S: Scalar>(w: &mut [S], g: &[S], s: &mut [S], lr: f64) -> Result<()> {
    if w.len() != g.len() || w.len() != s.len() {
        return Err(Error::shape(
            "rmsprop",
            format!("{} weights, {} gradients, {} accumulators", w.len(), g.len(), s.len()),
        ));
    }
    let (decay, keep, eps, lr) = (
        S::of(RMSPROP_DECAY),
        S::of(1.0 - RMSPROP_DECAY),
        S::of(RMSPROP_EPS),
        S::of(lr),
    );
    for ((w, &g), s) in w.iter_mut().zip(g).zip(s.iter_mut()) {
        *s = decay * *s + keep * g * g;
        *w -= lr * g / (*s + eps).sqrt();
    }
    Ok(())
}

/// Running mean-square accumulators keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<S> {
    pub accumulators: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> RmsProp<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        Self {
            accumulators: params
                .iter()
                .map(|(k, p)| (k.to_string(), Tensor::zeros(p.value.shape().to_vec())))
                .collect(),
        }
    }

    /// Apply the accumulated gradients of `params`.
    pub fn step(&mut self, params: &mut ParamStore<S>, lr: f64) -> Result<()> {
        for (name, p) in params.iter_mut() {
            let s = self
                .accumulators
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no optimizer state for {name}")))?;
            rmsprop_update(p.value.data_mut(), p.grad.data(), s.data_mut(), lr)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<S> {
    pub params: ModelParams<S>,
    pub opt_generator: RmsProp<S>,
    pub opt_critic: RmsProp<S>,
    /// Completed steps.
    pub iteration: u64,
    pub critic_updates: u64,
    pub generator_updates: u64,
}

impl<S: Scalar> TrainState<S> {
    /// Fresh parameters. The critic starts clipped, so every critic
    /// evaluation in training sees weights inside `[-c, c]`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut params = init_params(config.seed, &config.model)?;
        clip_weights(&mut params.critic, config.clip_c);
        Ok(Self {
            opt_generator: RmsProp::new(&params.generator),
            opt_critic: RmsProp::new(&params.critic),
            params,
            iteration: 0,
            critic_updates: 0,
            generator_updates: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Step number, counting from 1.
    pub iteration: u64,
    /// One entry per critic update, measured before the update.
    pub critic_losses: Vec<f64>,
    pub generator_loss: f64,
}

impl StepReport {
    pub fn mean_critic_loss(&self) -> f64 {
        self.critic_losses.iter().sum::<f64>() / self.critic_losses.len() as f64
    }
}

/// `batch[:, t]` as `[B, C, H, W]`.
pub fn frame_slice<S: Scalar>(batch: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
    let &[b, len, c, h, w] = batch.shape() else {
        return Err(Error::shape("frame_slice", format!("expected [B, T, C, H, W], got {:?}", batch.shape())));
    };
    if t >= len {
        return Err(Error::shape("frame_slice", format!("frame {t} of {len}")));
    }
    let plane = c * h * w;
    let mut out = Vec::with_capacity(b * plane);
    for i in 0..b {
        let off = (i * len + t) * plane;
        out.extend_from_slice(&batch.data()[off..off + plane]);
    }
    Tensor::new([b, c, h, w], out)
}

/// Latent leaves for one batched completion.
fn latents<S: Scalar>(
    tape: &mut Tape<S>,
    config: &TrainConfig,
    batch: usize,
    iteration: u64,
    substep: u64,
) -> Vec<Var> {
    let mut rng = crate::rng::stream(config.seed, &[iteration, substep]);
    let count = if config.per_pass_latent { config.model.clip_len - 2 } else { 1 };
    (0..count)
        .map(|_| tape.constant(Tensor::standard_normal([batch, config.model.latent_dim], &mut rng)))
        .collect()
}

fn fake_clips_on<S: Scalar>(
    tape: &mut Tape<S>,
    config: &TrainConfig,
    g: &Bound,
    real: &Tensor<S>,
    iteration: u64,
    substep: u64,
) -> Result<Var> {
    let len = config.model.clip_len;
    let f_start = tape.constant(frame_slice(real, 0)?);
    let f_end = tape.constant(frame_slice(real, len - 1)?);
    let zs = latents(tape, config, real.shape()[0], iteration, substep);
    let lv = if config.per_pass_latent {
        LatentVars::PerPass(&zs)
    } else {
        LatentVars::Shared(zs[0])
    };
    let done = complete_on_tape(tape, &config.model, g, f_start, f_end, len, lv)?;
    done.stacked(tape)
}

fn batch_number(config: &TrainConfig, iteration: u64, substep: u64) -> u64 {
    iteration * (config.n_critic as u64 + 1) + substep
}

fn critic_update<S: Scalar>(
    state: &mut TrainState<S>,
    config: &TrainConfig,
    data: &Dataset,
    substep: u64,
) -> Result<f64> {
    let k = state.iteration;
    let real = data.batch::<S>(Split::Train, batch_number(config, k, substep), config.batch_size)?;

    let fake = {
        let mut tape = Tape::new();
        let g = state.params.generator.bind(&mut tape, false);
        let v = fake_clips_on(&mut tape, config, &g, &real, k, substep)?;
        tape.tensor(v)
    };

    let mut tape = Tape::new();
    let d = state.params.critic.bind(&mut tape, true);
    let real_v = tape.constant(real);
    let fake_v = tape.constant(fake);
    let s_real = critic_on_tape(&mut tape, &config.model, &d, real_v)?;
    let s_fake = critic_on_tape(&mut tape, &config.model, &d, fake_v)?;
    let m_fake = tape.reduce_mean(s_fake);
    let m_real = tape.reduce_mean(s_real);
    let loss = tape.sub(m_fake, m_real)?;
    tape.backward(loss)?;

    let critic = &mut state.params.critic;
    critic.zero_grads();
    critic.accumulate_grads(&tape, &d);
    state.opt_critic.step(critic, config.learning_rate)?;
    clip_weights(critic, config.clip_c);
    state.critic_updates += 1;
    Ok(tape.item(loss).as_f64())
}

fn generator_update<S: Scalar>(state: &mut TrainState<S>, config: &TrainConfig, data: &Dataset) -> Result<f64> {
    let k = state.iteration;
    let substep = config.n_critic as u64;
    let real = data.batch::<S>(Split::Train, batch_number(config, k, substep), config.batch_size)?;

    let mut tape = Tape::new();
    let g = state.params.generator.bind(&mut tape, true);
    let d = state.params.critic.bind(&mut tape, false);
    let fake = fake_clips_on(&mut tape, config, &g, &real, k, substep)?;
    let scores = critic_on_tape(&mut tape, &config.model, &d, fake)?;
    let m = tape.reduce_mean(scores);
    let loss = tape.scale(m, -1.0);
    tape.backward(loss)?;

    let gen = &mut state.params.generator;
    gen.zero_grads();
    gen.accumulate_grads(&tape, &g);
    state.opt_generator.step(gen, config.learning_rate)?;
    state.generator_updates += 1;
    Ok(tape.item(loss).as_f64())
}

/// `n_critic` critic updates then one generator update.
pub fn train_step<S: Scalar>(state: &mut TrainState<S>, config: &TrainConfig, data: &Dataset) -> Result<StepReport> {
    train_step_observed(state, config, data, |_| {})
}

/// [`train_step`], calling `after_critic` with the state after each critic
/// update.
pub fn train_step_observed<S: Scalar>(
    state: &mut TrainState<S>,
    config: &TrainConfig,
    data: &Dataset,
    mut after_critic: impl FnMut(&TrainState<S>),
) -> Result<StepReport> {
    let mut critic_losses = Vec::with_capacity(config.n_critic);
    for s in 0..config.n_critic as u64 {
        critic_losses.push(critic_update(state, config, data, s)?);
        after_critic(state);
    }
    let generator_loss = generator_update(state, config, data)?;
    state.iteration += 1;
    Ok(StepReport {
        iteration: state.iteration,
        critic_losses,
        generator_loss,
    })
}
