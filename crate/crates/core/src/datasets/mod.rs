//! Synthetic video datasets and deterministic batching.

mod idx;
mod moving_mnist;
mod shapes;

pub use idx::{
    encode_idx_images, glyph_bytes, load_mnist_idx, parse_idx_images, write_synthetic_idx, DigitBank,
    DIGIT_PIXELS, DIGIT_SIDE, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use moving_mnist::{reflect_step, DigitTrack, MovingMnist, MovingMnistConfig};
pub use shapes::{centroid, motion_oracle, ShapeKind, ShapeSpec, Shapes2d, ShapesConfig};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, VideoClip};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MovingMnist,
    Shapes2d,
}

impl DatasetKind {
    /// Train and test clip counts of the published protocols.
    pub fn published_split(self) -> SplitSizes {
        match self {
            DatasetKind::MovingMnist => SplitSizes { train: 64_000, test: 320 },
            DatasetKind::Shapes2d => SplitSizes { train: 20_000, test: 500 },
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetKind::MovingMnist => 1,
            DatasetKind::Shapes2d => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Dataset section of a training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Shape kinds to draw from; ignored for Moving MNIST.
    #[serde(default = "all_shapes")]
    pub shapes: Vec<ShapeKind>,
    /// Overrides the published split sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_clips: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_clips: Option<usize>,
}

fn all_shapes() -> Vec<ShapeKind> {
    ShapeKind::ALL.to_vec()
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Shapes2d,
            shapes: all_shapes(),
            train_clips: None,
            test_clips: None,
        }
    }
}

impl DatasetConfig {
    pub fn split_sizes(&self) -> SplitSizes {
        let published = self.kind.published_split();
        SplitSizes {
            train: self.train_clips.unwrap_or(published.train),
            test: self.test_clips.unwrap_or(published.test),
        }
    }
}

#[derive(Clone, Debug)]
enum Source {
    MovingMnist(MovingMnist),
    Shapes(Shapes2d),
}

/// Clip generator plus split bookkeeping. Clip content is a pure function of
/// `(kind, seed, index)`; test clips use the indices after the train range.
#[derive(Clone, Debug)]
pub struct Dataset {
    source: Source,
    sizes: SplitSizes,
    seed: u64,
}

impl Dataset {
    /// `bank` is required for Moving MNIST.
    pub fn new(
        config: &DatasetConfig,
        model: &ModelConfig,
        bank: Option<DigitBank>,
        seed: u64,
    ) -> Result<Self> {
        if model.channels != config.kind.channels() {
            return Err(Error::Config(format!(
                "{:?} clips have {} channel(s) but the model expects {}",
                config.kind,
                config.kind.channels(),
                model.channels
            )));
        }
        let sizes = config.split_sizes();
        if sizes.train == 0 || sizes.test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        let source = match config.kind {
            DatasetKind::MovingMnist => {
                let bank = bank.ok_or_else(|| Error::Config("moving MNIST needs a digit bank".into()))?;
                let cfg = MovingMnistConfig {
                    image_size: model.image_size,
                    clip_len: model.clip_len,
                };
                Source::MovingMnist(MovingMnist::new(bank, cfg, seed)?)
            }
            DatasetKind::Shapes2d => {
                let cfg = ShapesConfig {
                    image_size: model.image_size,
                    clip_len: model.clip_len,
                    kinds: config.shapes.clone(),
                };
                Source::Shapes(Shapes2d::new(cfg, seed)?)
            }
        };
        Ok(Self { source, sizes, seed })
    }

    pub fn sizes(&self) -> SplitSizes {
        self.sizes
    }

    pub fn split_len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.sizes.train,
            Split::Test => self.sizes.test,
        }
    }

    /// Global clip index of item `i` of a split.
    pub fn clip_index(&self, split: Split, i: usize) -> u64 {
        match split {
            Split::Train => i as u64,
            Split::Test => (self.sizes.train + i) as u64,
        }
    }

    pub fn clip<S: Scalar>(&self, index: u64) -> VideoClip<S> {
        let clip = match &self.source {
            Source::MovingMnist(m) => m.clip(index),
            Source::Shapes(s) => s.clip(index),
        };
        VideoClip::new(clip.frames().cast()).expect("four axes")
    }

    /// Visiting order of the train split in `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.sizes.train).collect();
        order.shuffle(&mut crate::rng::stream(self.seed, &[0xe90c, epoch]));
        order
    }

    /// Global clip indices of batch `number`. The train split is reshuffled
    /// each epoch; the test split is read in order. Both wrap around.
    pub fn batch_indices(&self, split: Split, number: u64, batch_size: usize) -> Vec<u64> {
        let n = self.split_len(split) as u64;
        let first = number * batch_size as u64;
        let mut out = Vec::with_capacity(batch_size);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for q in first..first + batch_size as u64 {
            let (epoch, within) = (q / n, (q % n) as usize);
            let i = match split {
                Split::Test => within,
                Split::Train => {
                    if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                        cached = Some((epoch, self.epoch_order(epoch)));
                    }
                    cached.as_ref().unwrap().1[within]
                }
            };
            out.push(self.clip_index(split, i));
        }
        out
    }

    /// Batch `number` as `[B, T, C, H, W]`.
    pub fn batch<S: Scalar>(&self, split: Split, number: u64, batch_size: usize) -> Result<Tensor<S>> {
        let clips: Vec<Tensor<S>> = self
            .batch_indices(split, number, batch_size)
            .into_iter()
            .map(|i| self.clip::<S>(i).into_frames())
            .collect();
        Tensor::stack(&clips)
    }

    pub fn iter<S: Scalar>(&self, split: Split, batch_size: usize) -> BatchIterator<'_, S> {
        BatchIterator {
            dataset: self,
            split,
            batch_size,
            next: 0,
            _scalar: std::marker::PhantomData,
        }
    }
}

/// Endless stream of batches; see [`Dataset::batch`].
pub struct BatchIterator<'a, S> {
    dataset: &'a Dataset,
    split: Split,
    batch_size: usize,
    next: u64,
    _scalar: std::marker::PhantomData<S>,
}

impl<S> BatchIterator<'_, S> {
    /// Jump to batch `number`.
    pub fn seek(&mut self, number: u64) {
        self.next = number;
    }
}

impl<S: Scalar> Iterator for BatchIterator<'_, S> {
    type Item = Tensor<S>;

    fn next(&mut self) -> Option<Tensor<S>> {
        let b = self.dataset.batch(self.split, self.next, self.batch_size).ok()?;
        self.next += 1;
        Some(b)
    }
}
