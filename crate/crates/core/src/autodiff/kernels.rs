//! Slice-level kernels behind the tape ops. Everything here accumulates
//! (`+=`) into its output so backward rules can share buffers.

use crate::scalar::Scalar;

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[m,n] += a[k,m]ᵀ · b[k,n]`
pub(crate) fn gemm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product with four independent partial sums (fixed association order,
/// so results are reproducible).
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of one 2-D cross-correlation window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// `None` when the padded input is smaller than the kernel.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if stride == 0 || kh > ph || kw > pw {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, out: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfold `x[C,H,W]` into `col[C·kh·kw, out_h·out_w]`, zero where the window
/// overlaps padding. Overwrites `col`.
pub(crate) fn im2col<S: Scalar>(g: &ConvGeom, x: &[S], col: &mut [S]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oi in 0..g.out_h {
                    let line = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    match g.source(oi, ki, g.height) {
                        None => line.fill(S::zero()),
                        Some(ii) => {
                            let src = &plane[ii * g.width..(ii + 1) * g.width];
                            for (oj, v) in line.iter_mut().enumerate() {
                                *v = match g.source(oj, kj, g.width) {
                                    Some(jj) => src[jj],
                                    None => S::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `col` back into `x[C,H,W]`.
pub(crate) fn col2im<S: Scalar>(g: &ConvGeom, col: &[S], x: &mut [S]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oi in 0..g.out_h {
                    let Some(ii) = g.source(oi, ki, g.height) else {
                        continue;
                    };
                    let line = &src[oi * g.out_w..(oi + 1) * g.out_w];
                    let dst = &mut plane[ii * g.width..(ii + 1) * g.width];
                    for (oj, &v) in line.iter().enumerate() {
                        if let Some(jj) = g.source(oj, kj, g.width) {
                            dst[jj] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Dimensions of a batched convolution: `geom` describes the window sweep over
/// the *larger* plane (the conv input, or the transposed-conv output).
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeom,
}

/// Forward cross-correlation. `x[N,Cin,H,W]`, `w[Cout,Cin,kh,kw]` → `[N,Cout,oh,ow]`.
pub(crate) fn conv2d_forward<S: Scalar>(d: &ConvDims, x: &[S], w: &[S], b: &[S]) -> Vec<S> {
    let g = &d.geom;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = d.c_in * g.height * g.width;
    let out_len = d.c_out * cols;
    let mut col = vec![S::zero(); rows * cols];
    let mut out = vec![S::zero(); d.batch * out_len];
    for n in 0..d.batch {
        im2col(g, &x[n * in_len..(n + 1) * in_len], &mut col);
        let o = &mut out[n * out_len..(n + 1) * out_len];
        for (co, plane) in o.chunks_mut(cols).enumerate() {
            plane.fill(b[co]);
        }
        gemm_nn(d.c_out, rows, cols, w, &col, o);
    }
    out
}

/// Gradients of [`conv2d_forward`]; each `Option` is filled only when requested.
pub(crate) fn conv2d_backward<S: Scalar>(
    d: &ConvDims,
    x: &[S],
    w: &[S],
    dy: &[S],
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let g = &d.geom;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = d.c_in * g.height * g.width;
    let out_len = d.c_out * cols;
    if let Some(db) = db {
        for n in 0..d.batch {
            for (co, plane) in dy[n * out_len..(n + 1) * out_len].chunks(cols).enumerate() {
                db[co] += plane.iter().copied().sum::<S>();
            }
        }
    }
    let mut col = vec![S::zero(); rows * cols];
    if let Some(dw) = dw {
        for n in 0..d.batch {
            im2col(g, &x[n * in_len..(n + 1) * in_len], &mut col);
            gemm_nt(d.c_out, cols, rows, &dy[n * out_len..(n + 1) * out_len], &col, dw);
        }
    }
    if let Some(dx) = dx {
        for n in 0..d.batch {
            col.fill(S::zero());
            gemm_tn(rows, d.c_out, cols, w, &dy[n * out_len..(n + 1) * out_len], &mut col);
            col2im(g, &col, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
}

/// Transposed convolution. `x[N,Cin,h,w]`, `w[Cin,Cout,kh,kw]` → `[N,Cout,H,W]`
/// where `geom` sweeps the `[Cout,H,W]` output and produces `h×w` windows.
pub(crate) fn conv_transpose2d_forward<S: Scalar>(
    d: &ConvDims,
    x: &[S],
    w: &[S],
    b: &[S],
) -> Vec<S> {
    let g = &d.geom;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = d.c_in * cols;
    let out_plane = g.height * g.width;
    let out_len = d.c_out * out_plane;
    let mut col = vec![S::zero(); rows * cols];
    let mut out = vec![S::zero(); d.batch * out_len];
    for n in 0..d.batch {
        col.fill(S::zero());
        gemm_tn(rows, d.c_in, cols, w, &x[n * in_len..(n + 1) * in_len], &mut col);
        let o = &mut out[n * out_len..(n + 1) * out_len];
        col2im(g, &col, o);
        for (co, plane) in o.chunks_mut(out_plane).enumerate() {
            for v in plane {
                *v += b[co];
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward<S: Scalar>(
    d: &ConvDims,
    x: &[S],
    w: &[S],
    dy: &[S],
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let g = &d.geom;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = d.c_in * cols;
    let out_plane = g.height * g.width;
    let out_len = d.c_out * out_plane;
    if let Some(db) = db {
        for n in 0..d.batch {
            for (co, plane) in dy[n * out_len..(n + 1) * out_len]
                .chunks(out_plane)
                .enumerate()
            {
                db[co] += plane.iter().copied().sum::<S>();
            }
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let mut col = vec![S::zero(); rows * cols];
    let (mut dx, mut dw) = (dx, dw);
    for n in 0..d.batch {
        im2col(g, &dy[n * out_len..(n + 1) * out_len], &mut col);
        if let Some(dx) = dx.as_deref_mut() {
            gemm_nn(d.c_in, rows, cols, w, &col, &mut dx[n * in_len..(n + 1) * in_len]);
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm_nt(d.c_in, cols, rows, &x[n * in_len..(n + 1) * in_len], &col, dw);
        }
    }
}
