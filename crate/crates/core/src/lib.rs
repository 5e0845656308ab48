//! Two-frame video inbetweening with affine motion layers.
//!
//! Given a start and an end frame, a generator encodes the pair, proposes `P`
//! affine transforms and per-pixel masks, warps the start frame by each
//! transform and composites the results into the midpoint frame. Interior
//! frames are filled recursively; a Wasserstein critic judges whole clips.
//! A Gaussian latent code makes the generator produce different plausible
//! completions for the same pair.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the training precision.

pub mod autodiff;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod media;
pub mod merge;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod warp;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Element type used for training and inference.
pub type Real = f32;

pub type Tensor = tensor::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type AffineTransform = warp::AffineTransform<Real>;
pub type SampleGrid = warp::SampleGrid<Real>;
pub type MaskStack = merge::MaskStack<Real>;
pub type ParamStore = params::ParamStore<Real>;
pub type ModelParams = model::ModelParams<Real>;
pub type VideoClip = model::VideoClip<Real>;

pub use autodiff::Var;
