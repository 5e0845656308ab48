//! Differentiable affine warping.
//!
//! A 2×3 matrix `T = [[a, b, tx], [c, d, ty]]` maps each output pixel's
//! normalized coordinate `(x, y) ∈ [-1, 1]²` to a source coordinate
//! `(x̂, ŷ) = T·(x, y, 1)ᵀ`. The source is then read with the tent kernel
//! `max(0, 1 - |x̂_pix - i|)·max(0, 1 - |ŷ_pix - j|)` in pixel units, where
//! `x_pix = (x̂ + 1)/2·(W - 1)`. Samples whose kernel support misses the image
//! read zero.
//!
//! The direction is backward: `T` maps output coordinates to source
//! coordinates, so a positive `tx` moves content left.

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Six affine parameters in row-major order `[a, b, tx, c, d, ty]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform<S> {
    params: [S; 6],
}

impl<S: Scalar> AffineTransform<S> {
    pub const IDENTITY_PARAMS: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

    pub fn new(params: [S; 6]) -> Result<Self> {
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "affine parameters must be finite, got {params:?}"
            )));
        }
        Ok(Self { params })
    }

    pub fn identity() -> Self {
        Self {
            params: Self::IDENTITY_PARAMS.map(S::of),
        }
    }

    /// Pure translation in normalized units.
    pub fn translation(tx: S, ty: S) -> Self {
        let mut t = Self::identity();
        t.params[2] = tx;
        t.params[5] = ty;
        t
    }

    pub fn params(&self) -> [S; 6] {
        self.params
    }

    pub fn is_identity(&self) -> bool {
        self.params == Self::IDENTITY_PARAMS.map(S::of)
    }

    /// `T · (x, y, 1)ᵀ`
    pub fn apply(&self, x: S, y: S) -> (S, S) {
        let [a, b, tx, c, d, ty] = self.params;
        (a * x + b * y + tx, c * x + d * y + ty)
    }
}

impl<S: Scalar> Default for AffineTransform<S> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Normalized coordinate of pixel `i` along an axis of `extent` pixels.
#[inline]
pub fn normalized_coord<S: Scalar>(i: usize, extent: usize) -> S {
    S::of(2.0) * S::of(i as f64) / S::of((extent - 1) as f64) - S::one()
}

/// Inverse of [`normalized_coord`], not rounded.
#[inline]
pub fn pixel_coord<S: Scalar>(u: S, extent: usize) -> S {
    (u + S::one()) / S::of(2.0) * S::of((extent - 1) as f64)
}

/// Source coordinates `(x̂_k, ŷ_k)` for every output pixel, shape `[H, W, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid<S> {
    coords: Tensor<S>,
}

impl<S: Scalar> SampleGrid<S> {
    pub fn from_coords(coords: Tensor<S>) -> Result<Self> {
        match coords.shape() {
            [h, w, 2] if *h >= 1 && *w >= 1 => Ok(Self { coords }),
            s => Err(Error::shape(
                "sample_grid",
                format!("expected [H, W, 2], got {s:?}"),
            )),
        }
    }

    pub fn height(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn coords(&self) -> &Tensor<S> {
        &self.coords
    }

    pub fn at(&self, row: usize, col: usize) -> (S, S) {
        let k = (row * self.width() + col) * 2;
        let d = self.coords.data();
        (d[k], d[k + 1])
    }
}

fn check_extents(height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(Error::shape(
            "affine_grid",
            format!("height and width must be at least 2, got {height}x{width}"),
        ));
    }
    Ok(())
}

pub fn affine_grid<S: Scalar>(
    t: &AffineTransform<S>,
    height: usize,
    width: usize,
) -> Result<SampleGrid<S>> {
    check_extents(height, width)?;
    let coords = affine_grid_forward(&t.params, 1, height, width);
    SampleGrid::from_coords(Tensor::new([height, width, 2], coords)?)
}

/// Tent-kernel sampling of a `[C, H, W]` image on `grid`. The output
/// plane is the grid's plane.
pub fn bilinear_sample<S: Scalar>(image: &Tensor<S>, grid: &SampleGrid<S>) -> Result<Tensor<S>> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(
            "bilinear_sample",
            format!("image must be [C, H, W], got {:?}", image.shape()),
        ));
    };
    let g = SamplerGeom {
        images: 1,
        grids: 1,
        channels: c,
        src_h: h,
        src_w: w,
        out_h: grid.height(),
        out_w: grid.width(),
    };
    let out = bilinear_forward(&g, image.data(), grid.coords.data());
    Tensor::new([c, g.out_h, g.out_w], out)
}

/// Backward-warp `image[C, H, W]` by `t`.
pub fn warp_image<S: Scalar>(image: &Tensor<S>, t: &AffineTransform<S>) -> Result<Tensor<S>> {
    let [_, h, w] = *image.shape() else {
        return Err(Error::shape(
            "warp_image",
            format!("image must be [C, H, W], got {:?}", image.shape()),
        ));
    };
    bilinear_sample(image, &affine_grid(t, h, w)?)
}

/// `theta[N*6]` → grid `[N, H, W, 2]`.
pub(crate) fn affine_grid_forward<S: Scalar>(
    theta: &[S],
    batch: usize,
    height: usize,
    width: usize,
) -> Vec<S> {
    let xs: Vec<S> = (0..width).map(|j| normalized_coord(j, width)).collect();
    let ys: Vec<S> = (0..height).map(|i| normalized_coord(i, height)).collect();
    let mut out = Vec::with_capacity(batch * height * width * 2);
    for t in theta.chunks_exact(6).take(batch) {
        let [a, b, tx, c, d, ty] = [t[0], t[1], t[2], t[3], t[4], t[5]];
        for &y in &ys {
            for &x in &xs {
                out.push(a * x + b * y + tx);
                out.push(c * x + d * y + ty);
            }
        }
    }
    out
}

pub(crate) fn affine_grid_backward<S: Scalar>(
    dgrid: &[S],
    batch: usize,
    height: usize,
    width: usize,
) -> Vec<S> {
    let xs: Vec<S> = (0..width).map(|j| normalized_coord(j, width)).collect();
    let ys: Vec<S> = (0..height).map(|i| normalized_coord(i, height)).collect();
    let plane = height * width * 2;
    let mut dtheta = vec![S::zero(); batch * 6];
    for n in 0..batch {
        let g = &dgrid[n * plane..(n + 1) * plane];
        let dt = &mut dtheta[n * 6..(n + 1) * 6];
        for (i, &y) in ys.iter().enumerate() {
            for (j, &x) in xs.iter().enumerate() {
                let k = (i * width + j) * 2;
                let (gx, gy) = (g[k], g[k + 1]);
                dt[0] += gx * x;
                dt[1] += gx * y;
                dt[2] += gx;
                dt[3] += gy * x;
                dt[4] += gy * y;
                dt[5] += gy;
            }
        }
    }
    dtheta
}

/// Batched sampler layout. Grid `g` reads image `g / (grids / images)`, so
/// several consecutive grids may share one source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct SamplerGeom {
    pub images: usize,
    pub grids: usize,
    pub channels: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl SamplerGeom {
    fn group(&self) -> usize {
        self.grids / self.images
    }
}

/// Pixel coordinate of a grid entry. Values within a few ulps of a lattice
/// point are snapped onto it, so that whole-pixel transforms copy pixels
/// exactly instead of leaking rounding error into the neighbours.
#[inline]
fn sample_coord<S: Scalar>(u: S, extent: usize) -> S {
    let p = pixel_coord(u, extent);
    let r = p.round();
    if (p - r).abs() <= S::epsilon() * S::of(4.0 * extent as f64) {
        r
    } else {
        p
    }
}

/// Up to four in-bounds taps `(flat source offset, weight, dx-weight, dy-weight)`
/// for a sample at pixel coordinates `(xp, yp)`. The derivative weights are the
/// one-sided (right) derivatives of the tent weights.
#[inline]
fn taps<S: Scalar>(xp: S, yp: S, h: usize, w: usize) -> [(usize, S, S, S); 4] {
    const NONE: usize = usize::MAX;
    let mut out = [(NONE, S::zero(), S::zero(), S::zero()); 4];
    if !(xp.is_finite() && yp.is_finite()) {
        return out;
    }
    let (x0f, y0f) = (xp.floor(), yp.floor());
    let (fx, fy) = (xp - x0f, yp - y0f);
    let (x0, y0) = (x0f.as_f64(), y0f.as_f64());
    let one = S::one();
    let corners = [
        (0.0, 0.0, (one - fx) * (one - fy), -(one - fy), -(one - fx)),
        (1.0, 0.0, fx * (one - fy), one - fy, -fx),
        (0.0, 1.0, (one - fx) * fy, -fy, one - fx),
        (1.0, 1.0, fx * fy, fy, fx),
    ];
    for (slot, &(ox, oy, wgt, dwx, dwy)) in out.iter_mut().zip(&corners) {
        let (cx, cy) = (x0 + ox, y0 + oy);
        if cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64 {
            *slot = (cy as usize * w + cx as usize, wgt, dwx, dwy);
        }
    }
    out
}

pub(crate) fn bilinear_forward<S: Scalar>(g: &SamplerGeom, image: &[S], grid: &[S]) -> Vec<S> {
    let src_plane = g.src_h * g.src_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![S::zero(); g.grids * g.channels * out_plane];
    for n in 0..g.grids {
        let img = &image[(n / g.group()) * g.channels * src_plane..][..g.channels * src_plane];
        let o = &mut out[n * g.channels * out_plane..][..g.channels * out_plane];
        for k in 0..out_plane {
            let gi = (n * out_plane + k) * 2;
            let xp = sample_coord(grid[gi], g.src_w);
            let yp = sample_coord(grid[gi + 1], g.src_h);
            for (off, wgt, _, _) in taps(xp, yp, g.src_h, g.src_w) {
                if off == usize::MAX {
                    continue;
                }
                for c in 0..g.channels {
                    o[c * out_plane + k] += wgt * img[c * src_plane + off];
                }
            }
        }
    }
    out
}

/// Returns `(d image, d grid)`, each computed only when requested.
pub(crate) fn bilinear_backward<S: Scalar>(
    g: &SamplerGeom,
    image: &[S],
    grid: &[S],
    dy: &[S],
    want_image: bool,
    want_grid: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let src_plane = g.src_h * g.src_w;
    let out_plane = g.out_h * g.out_w;
    let mut dimage = want_image.then(|| vec![S::zero(); image.len()]);
    let mut dgrid = want_grid.then(|| vec![S::zero(); grid.len()]);
    let sx = S::of((g.src_w - 1) as f64 / 2.0);
    let sy = S::of((g.src_h - 1) as f64 / 2.0);
    for n in 0..g.grids {
        let base = (n / g.group()) * g.channels * src_plane;
        let img = &image[base..base + g.channels * src_plane];
        let go = &dy[n * g.channels * out_plane..][..g.channels * out_plane];
        for k in 0..out_plane {
            let gi = (n * out_plane + k) * 2;
            let xp = sample_coord(grid[gi], g.src_w);
            let yp = sample_coord(grid[gi + 1], g.src_h);
            let (mut dxp, mut dyp) = (S::zero(), S::zero());
            for (off, wgt, dwx, dwy) in taps(xp, yp, g.src_h, g.src_w) {
                if off == usize::MAX {
                    continue;
                }
                for c in 0..g.channels {
                    let up = go[c * out_plane + k];
                    if let Some(di) = dimage.as_mut() {
                        di[base + c * src_plane + off] += wgt * up;
                    }
                    let v = img[c * src_plane + off] * up;
                    dxp += dwx * v;
                    dyp += dwy * v;
                }
            }
            if let Some(dg) = dgrid.as_mut() {
                dg[gi] += dxp * sx;
                dg[gi + 1] += dyp * sy;
            }
        }
    }
    (dimage, dgrid)
}

impl<S: Scalar> Tape<S> {
    /// Batched [`affine_grid`]: `theta[N, 6]` → grid `[N, H, W, 2]`.
    pub fn affine_grid(&mut self, theta: Var, height: usize, width: usize) -> Result<Var> {
        check_extents(height, width)?;
        let shape = self.shape(theta);
        let batch = match *shape {
            [n, 6] => n,
            _ => {
                return Err(Error::shape(
                    "affine_grid",
                    format!("theta must be [N, 6], got {shape:?}"),
                ))
            }
        };
        let out = affine_grid_forward(self.value(theta), batch, height, width);
        Ok(self.push_op(
            vec![batch, height, width, 2],
            out,
            Op::AffineGrid {
                theta,
                height,
                width,
            },
        ))
    }

    /// Batched [`bilinear_sample`]: `image[Ni, C, H, W]`, `grid[Ng, Ho, Wo, 2]`
    /// with `Ng` a multiple of `Ni`; consecutive groups of `Ng / Ni` grids share
    /// one image. Output `[Ng, C, Ho, Wo]`.
    pub fn bilinear_sample(&mut self, image: Var, grid: Var) -> Result<Var> {
        let (&[ni, c, h, w], &[ng, ho, wo, 2]) = (self.shape(image), self.shape(grid)) else {
            return Err(Error::shape(
                "bilinear_sample",
                format!(
                    "expected image [N, C, H, W] and grid [N, H, W, 2], got {:?} and {:?}",
                    self.shape(image),
                    self.shape(grid)
                ),
            ));
        };
        if ng % ni != 0 {
            return Err(Error::shape(
                "bilinear_sample",
                format!("grid batch {ng} is not a multiple of image batch {ni}"),
            ));
        }
        if h < 2 || w < 2 {
            return Err(Error::shape(
                "bilinear_sample",
                format!("source plane must be at least 2x2, got {h}x{w}"),
            ));
        }
        let geom = SamplerGeom {
            images: ni,
            grids: ng,
            channels: c,
            src_h: h,
            src_w: w,
            out_h: ho,
            out_w: wo,
        };
        let out = bilinear_forward(&geom, self.value(image), self.value(grid));
        Ok(self.push_op(
            vec![ng, c, ho, wo],
            out,
            Op::BilinearSample { image, grid, geom },
        ))
    }

    /// `bilinear_sample(image, affine_grid(theta))` over the image's own plane.
    pub fn warp(&mut self, image: Var, theta: Var) -> Result<Var> {
        let [_, _, h, w] = *self.shape(image) else {
            return Err(Error::shape(
                "warp",
                format!("image must be [N, C, H, W], got {:?}", self.shape(image)),
            ));
        };
        let grid = self.affine_grid(theta, h, w)?;
        self.bilinear_sample(image, grid)
    }
}
