//! Masked compositing of P transformed images into one frame.
//!
//! `out(c, h, w) = Σ_p mask[p, h, w] · image_p(c, h, w)`. Masks come out of a
//! channel softmax, so each output pixel is a convex combination of the
//! transformed inputs at that pixel.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Tolerance on `Σ_p mask = 1` accepted by [`MaskStack::new`].
pub const MASK_SUM_TOLERANCE: f64 = 1e-6;

/// Per-pixel weights `[P, H, W]`, non-negative and summing to one over `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack<S> {
    masks: Tensor<S>,
}

impl<S: Scalar> MaskStack<S> {
    pub fn new(masks: Tensor<S>) -> Result<Self> {
        let [p, h, w] = *masks.shape() else {
            return Err(Error::shape(
                "mask_stack",
                format!("expected [P, H, W], got {:?}", masks.shape()),
            ));
        };
        let plane = h * w;
        let d = masks.data();
        for k in 0..plane {
            let mut sum = 0.0;
            for q in 0..p {
                let m = d[q * plane + k].as_f64();
                if !(0.0..=1.0).contains(&m) {
                    return Err(Error::InvalidArgument(format!(
                        "mask value {m} outside [0, 1] at layer {q}, pixel {k}"
                    )));
                }
                sum += m;
            }
            if (sum - 1.0).abs() > MASK_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "masks sum to {sum} at pixel {k}"
                )));
            }
        }
        Ok(Self { masks })
    }

    /// Channel softmax of `[P, H, W]` logits.
    pub fn from_logits(logits: &Tensor<S>) -> Result<Self> {
        let [p, h, w] = *logits.shape() else {
            return Err(Error::shape(
                "mask_stack",
                format!("expected [P, H, W] logits, got {:?}", logits.shape()),
            ));
        };
        let masks = crate::autodiff::softmax_channels_forward(logits.data(), 1, p, h * w);
        Ok(Self {
            masks: Tensor::new([p, h, w], masks)?,
        })
    }

    pub fn layers(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn masks(&self) -> &Tensor<S> {
        &self.masks
    }
}

/// Composite `transformed` (each `[C, H, W]`) through `masks`.
pub fn merge_masked<S: Scalar>(
    transformed: &[Tensor<S>],
    masks: &MaskStack<S>,
) -> Result<Tensor<S>> {
    let p = masks.layers();
    if transformed.len() != p {
        return Err(Error::shape(
            "merge_masked",
            format!("{} images for {p} masks", transformed.len()),
        ));
    }
    let first = &transformed[0];
    let &[c, h, w] = first.shape() else {
        return Err(Error::shape(
            "merge_masked",
            format!("images must be [C, H, W], got {:?}", first.shape()),
        ));
    };
    if masks.masks.shape()[1..] != [h, w] {
        return Err(Error::shape(
            "merge_masked",
            format!(
                "mask plane {:?} does not match image plane [{h}, {w}]",
                &masks.masks.shape()[1..]
            ),
        ));
    }
    if let Some((i, bad)) = transformed
        .iter()
        .enumerate()
        .find(|(_, t)| t.shape() != first.shape())
    {
        return Err(Error::shape(
            "merge_masked",
            format!("image {i} has shape {:?}, expected {:?}", bad.shape(), first.shape()),
        ));
    }
    let stacked = Tensor::stack(transformed)?;
    let out = merge_forward(stacked.data(), masks.masks.data(), 1, p, c, h * w);
    Tensor::new([c, h, w], out)
}

/// `images[N*P, C, plane]`, `masks[N, P, plane]` → `[N, C, plane]`.
pub(crate) fn merge_forward<S: Scalar>(
    images: &[S],
    masks: &[S],
    batch: usize,
    layers: usize,
    channels: usize,
    plane: usize,
) -> Vec<S> {
    let mut out = vec![S::zero(); batch * channels * plane];
    for n in 0..batch {
        let o = &mut out[n * channels * plane..][..channels * plane];
        for p in 0..layers {
            let m = &masks[(n * layers + p) * plane..][..plane];
            let img = &images[(n * layers + p) * channels * plane..][..channels * plane];
            for c in 0..channels {
                let oc = &mut o[c * plane..(c + 1) * plane];
                let ic = &img[c * plane..(c + 1) * plane];
                for ((ov, &iv), &mv) in oc.iter_mut().zip(ic).zip(m) {
                    *ov += mv * iv;
                }
            }
        }
    }
    out
}

pub(crate) fn merge_backward<S: Scalar>(
    images: &[S],
    masks: &[S],
    dy: &[S],
    dims: (usize, usize, usize, usize),
    want_images: bool,
    want_masks: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let (batch, layers, channels, plane) = dims;
    let mut dimages = want_images.then(|| vec![S::zero(); images.len()]);
    let mut dmasks = want_masks.then(|| vec![S::zero(); masks.len()]);
    for n in 0..batch {
        let g = &dy[n * channels * plane..][..channels * plane];
        for p in 0..layers {
            let moff = (n * layers + p) * plane;
            let ioff = (n * layers + p) * channels * plane;
            for c in 0..channels {
                let gc = &g[c * plane..(c + 1) * plane];
                if let Some(di) = dimages.as_mut() {
                    let dst = &mut di[ioff + c * plane..][..plane];
                    for ((d, &gv), &mv) in dst.iter_mut().zip(gc).zip(&masks[moff..moff + plane]) {
                        *d += mv * gv;
                    }
                }
                if let Some(dm) = dmasks.as_mut() {
                    let src = &images[ioff + c * plane..][..plane];
                    for ((d, &gv), &iv) in dm[moff..moff + plane].iter_mut().zip(gc).zip(src) {
                        *d += iv * gv;
                    }
                }
            }
        }
    }
    (dimages, dmasks)
}

impl<S: Scalar> Tape<S> {
    /// Batched [`merge_masked`]: `images[N*P, C, H, W]` (layer-minor),
    /// `masks[N, P, H, W]` → `[N, C, H, W]`.
    pub fn merge_masked(&mut self, images: Var, masks: Var) -> Result<Var> {
        let (&[np, c, h, w], &[n, p, mh, mw]) = (self.shape(images), self.shape(masks)) else {
            return Err(Error::shape(
                "merge_masked",
                format!(
                    "expected images [N*P, C, H, W] and masks [N, P, H, W], got {:?} and {:?}",
                    self.shape(images),
                    self.shape(masks)
                ),
            ));
        };
        if np != n * p || (h, w) != (mh, mw) {
            return Err(Error::shape(
                "merge_masked",
                format!(
                    "images {:?} incompatible with masks {:?}",
                    self.shape(images),
                    self.shape(masks)
                ),
            ));
        }
        let out = merge_forward(self.value(images), self.value(masks), n, p, c, h * w);
        Ok(self.push_op(
            vec![n, c, h, w],
            out,
            Op::Merge {
                images,
                masks,
                dims: (n, p, c, h * w),
            },
        ))
    }
}
