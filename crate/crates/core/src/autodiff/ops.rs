use super::kernels::{self, ConvDims, ConvGeom};
use super::{Node, Tape, Var};
use crate::error::{Error, Result};
use crate::merge;
use crate::scalar::Scalar;
use crate::warp::{self, SamplerGeom};

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > S::zero() {
                    x
                } else {
                    x * S::of(alpha)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => S::one() / (S::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    #[inline]
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::of(alpha)
                }
            }
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    /// User-supplied elementwise function with its derivative.
    Map {
        x: Var,
        df: fn(f64) -> f64,
    },
    SoftmaxChannels {
        x: Var,
    },
    /// `b` may hold a single element that broadcasts over `a`.
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddScalar {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    ReduceMean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    AffineGrid {
        theta: Var,
        height: usize,
        width: usize,
    },
    BilinearSample {
        image: Var,
        grid: Var,
        geom: SamplerGeom,
    },
    Merge {
        images: Var,
        masks: Var,
        dims: (usize, usize, usize, usize),
    },
}

impl Op {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } | Op::Dense { x, w, b } => {
                vec![*x, *w, *b]
            }
            Op::Act { x, .. }
            | Op::Map { x, .. }
            | Op::SoftmaxChannels { x }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::ReduceMean { x }
            | Op::Reshape { x } => vec![*x],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
            Op::AffineGrid { theta, .. } => vec![*theta],
            Op::BilinearSample { image, grid, .. } => vec![*image, *grid],
            Op::Merge { images, masks, .. } => vec![*images, *masks],
        }
    }
}

/// Softmax over axis 1 of `[N, P, plane]`, max-subtracted.
pub(crate) fn softmax_channels_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    layers: usize,
    plane: usize,
) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for n in 0..batch {
        let base = n * layers * plane;
        for k in 0..plane {
            let at = |p: usize| base + p * plane + k;
            let max = (0..layers).map(|p| x[at(p)]).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for p in 0..layers {
                let e = (x[at(p)] - max).exp();
                out[at(p)] = e;
                sum += e;
            }
            for p in 0..layers {
                out[at(p)] /= sum;
            }
        }
    }
    out
}

fn conv_weight_shape(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *shape {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(op, format!("kernel must be 4-D, got {shape:?}"))),
    }
}

impl<S: Scalar> Tape<S> {
    fn shape4(&self, v: Var, op: &'static str, what: &str) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [a, b, c, d] => Ok([a, b, c, d]),
            ref s => Err(Error::shape(op, format!("{what} must be [N, C, H, W], got {s:?}"))),
        }
    }

    /// Cross-correlation of `x[N,Cin,H,W]` with `w[Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c_in, h, wd] = self.shape4(x, OP, "input")?;
        let [c_out, k_in, kh, kw] = conv_weight_shape(self.shape(w), OP)?;
        if k_in != c_in {
            return Err(Error::shape(
                OP,
                format!("input channels {c_in} but kernel expects {k_in} (kernel dim 1)"),
            ));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?}, expected [{c_out}]", self.shape(b)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        let geom = ConvGeom::new(c_in, h, wd, kh, kw, stride, padding).ok_or_else(|| {
            Error::shape(
                OP,
                format!("kernel {kh}x{kw} larger than padded input {h}x{wd} (padding {padding})"),
            )
        })?;
        let dims = ConvDims {
            batch: n,
            c_in,
            c_out,
            geom,
        };
        let out = kernels::conv2d_forward(&dims, self.value(x), self.value(w), self.value(b));
        Ok(self.push_op(
            vec![n, c_out, geom.out_h, geom.out_w],
            out,
            Op::Conv2d { x, w, b, dims },
        ))
    }

    /// Transposed convolution of `x[N,Cin,H,W]` with `w[Cin,Cout,kh,kw]`;
    /// output extent `(H-1)·stride - 2·padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "transposed_conv2d";
        let [n, c_in, h, wd] = self.shape4(x, OP, "input")?;
        let [k_in, c_out, kh, kw] = conv_weight_shape(self.shape(w), OP)?;
        if k_in != c_in {
            return Err(Error::shape(
                OP,
                format!("input channels {c_in} but kernel expects {k_in} (kernel dim 0)"),
            ));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?}, expected [{c_out}]", self.shape(b)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        let out_h = ((h - 1) * stride + kh).checked_sub(2 * padding).filter(|&v| v > 0);
        let out_w = ((wd - 1) * stride + kw).checked_sub(2 * padding).filter(|&v| v > 0);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape(OP, format!("padding {padding} leaves an empty output")));
        };
        let geom = ConvGeom::new(c_out, out_h, out_w, kh, kw, stride, padding)
            .filter(|g| g.out_h == h && g.out_w == wd)
            .ok_or_else(|| Error::shape(OP, "inconsistent transposed geometry"))?;
        let dims = ConvDims {
            batch: n,
            c_in,
            c_out,
            geom,
        };
        let out =
            kernels::conv_transpose2d_forward(&dims, self.value(x), self.value(w), self.value(b));
        Ok(self.push_op(
            vec![n, c_out, out_h, out_w],
            out,
            Op::ConvTranspose2d { x, w, b, dims },
        ))
    }

    /// `x[N,Din] · w[Dout,Din]ᵀ + b`
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (&[n, din], &[dout, win]) = (self.shape(x), self.shape(w)) else {
            return Err(Error::shape(
                OP,
                format!(
                    "expected input [N, Din] and weight [Dout, Din], got {:?} and {:?}",
                    self.shape(x),
                    self.shape(w)
                ),
            ));
        };
        if din != win {
            return Err(Error::shape(
                OP,
                format!("input features {din} but weight expects {win}"),
            ));
        }
        if self.shape(b) != [dout] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?}, expected [{dout}]", self.shape(b)),
            ));
        }
        let bias = self.value(b);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        kernels::gemm_nt(n, din, dout, self.value(x), self.value(w), &mut out);
        Ok(self.push_op(vec![n, dout], out, Op::Dense { x, w, b }))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        if let Activation::LeakyRelu(alpha) = kind {
            assert!(alpha > 0.0 && alpha < 1.0, "leaky_relu slope must lie in (0, 1)");
        }
        let out = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(shape, out, Op::Act { x, kind })
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.activation(Activation::LeakyRelu(alpha), x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    /// Elementwise `f` with derivative `df`, both evaluated in `f64`.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|&v| S::of(f(v.as_f64()))).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(shape, out, Op::Map { x, df })
    }

    /// Softmax over axis 1 of `[N, P, ...]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(
                "softmax_channels",
                format!("need at least 2 axes, got {shape:?}"),
            ));
        }
        let plane = shape[2..].iter().product();
        let out = softmax_channels_forward(self.value(x), shape[0], shape[1], plane);
        Ok(self.push_op(shape, out, Op::SoftmaxChannels { x }))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, op: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        let broadcast = sb.iter().product::<usize>() == 1;
        if sa != sb && !broadcast {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let pick = |i: usize| if broadcast { vb[0] } else { vb[i] };
        let out = va
            .iter()
            .enumerate()
            .map(|(i, &x)| match kind {
                BinaryKind::Add => x + pick(i),
                BinaryKind::Sub => x - pick(i),
                BinaryKind::Mul => x * pick(i),
            })
            .collect();
        Ok(self.push_op(sa, out, Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = S::of(factor);
        let out = self.value(x).iter().map(|&v| v * f).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(shape, out, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = S::of(c);
        let out = self.value(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(shape, out, Op::AddScalar { x })
    }

    /// Concatenate along axis 1; all other extents must agree.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape(OP, "no parts to concatenate"))?;
        let base = self.shape(first).to_vec();
        if base.len() < 2 {
            return Err(Error::shape(OP, format!("parts need at least 2 axes, got {base:?}")));
        }
        let mut channels = 0;
        for (i, &p) in parts.iter().enumerate() {
            let s = self.shape(p);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::shape(
                    OP,
                    format!("part {i} has shape {s:?}, incompatible with {base:?}"),
                ));
            }
            channels += s[1];
        }
        let n = base[0];
        let inner: usize = base[2..].iter().product();
        let mut out = Vec::with_capacity(n * channels * inner);
        for s in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[s * c * inner..(s + 1) * c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = channels;
        Ok(self.push_op(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mean = v.iter().copied().sum::<S>() / S::of(v.len() as f64);
        self.push_op(vec![1], vec![mean], Op::ReduceMean { x })
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        Ok(self.push_op(shape, out, Op::Reshape { x }))
    }
}

/// Vector-Jacobian products of node `i` given its upstream gradient `g`.
/// Only inputs that track gradients receive a contribution.
pub(crate) fn backward_node<S: Scalar>(nodes: &[Node<S>], i: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
    let wants = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| nodes[v.0].value.as_slice();
    let zeros = |v: Var| vec![S::zero(); nodes[v.0].value.len()];
    let mut out = Vec::new();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::Conv2d { x, w, b, dims } => {
            let mut dx = wants(x).then(|| zeros(x));
            let mut dw = wants(w).then(|| zeros(w));
            let mut db = wants(b).then(|| zeros(b));
            kernels::conv2d_backward(
                &dims,
                val(x),
                val(w),
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            out.extend([(x, dx), (w, dw), (b, db)].into_iter().filter_map(|(v, d)| d.map(|d| (v, d))));
        }
        &Op::ConvTranspose2d { x, w, b, dims } => {
            let mut dx = wants(x).then(|| zeros(x));
            let mut dw = wants(w).then(|| zeros(w));
            let mut db = wants(b).then(|| zeros(b));
            kernels::conv_transpose2d_backward(
                &dims,
                val(x),
                val(w),
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            out.extend([(x, dx), (w, dw), (b, db)].into_iter().filter_map(|(v, d)| d.map(|d| (v, d))));
        }
        &Op::Dense { x, w, b } => {
            let (n, din) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
            let dout = nodes[w.0].shape[0];
            if wants(x) {
                let mut dx = zeros(x);
                kernels::gemm_nn(n, dout, din, g, val(w), &mut dx);
                out.push((x, dx));
            }
            if wants(w) {
                let mut dw = zeros(w);
                kernels::gemm_tn(dout, n, din, g, val(x), &mut dw);
                out.push((w, dw));
            }
            if wants(b) {
                let mut db = zeros(b);
                for row in g.chunks(dout) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
                out.push((b, db));
            }
        }
        &Op::Act { x, kind } => {
            if wants(x) {
                let y = &nodes[i].value;
                let dx = val(x)
                    .iter()
                    .zip(y)
                    .zip(g)
                    .map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv))
                    .collect();
                out.push((x, dx));
            }
        }
        &Op::Map { x, df } => {
            if wants(x) {
                let dx = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| gv * S::of(df(xv.as_f64())))
                    .collect();
                out.push((x, dx));
            }
        }
        &Op::SoftmaxChannels { x } => {
            if wants(x) {
                let shape = &nodes[i].shape;
                let (batch, layers) = (shape[0], shape[1]);
                let plane: usize = shape[2..].iter().product();
                let y = &nodes[i].value;
                let mut dx = zeros(x);
                for n in 0..batch {
                    let base = n * layers * plane;
                    for k in 0..plane {
                        let at = |p: usize| base + p * plane + k;
                        let dot: S = (0..layers).map(|p| y[at(p)] * g[at(p)]).sum();
                        for p in 0..layers {
                            dx[at(p)] = y[at(p)] * (g[at(p)] - dot);
                        }
                    }
                }
                out.push((x, dx));
            }
        }
        &Op::Binary { a, b, kind } => {
            let broadcast = nodes[b.0].value.len() == 1 && nodes[a.0].value.len() != 1;
            let (va, vb) = (val(a), val(b));
            let pick = |i: usize| if broadcast { vb[0] } else { vb[i] };
            if wants(a) {
                let da = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                    BinaryKind::Mul => g.iter().enumerate().map(|(i, &gv)| gv * pick(i)).collect(),
                };
                out.push((a, da));
            }
            if wants(b) {
                let per_elem: Vec<S> = match kind {
                    BinaryKind::Add => g.to_vec(),
                    BinaryKind::Sub => g.iter().map(|&gv| -gv).collect(),
                    BinaryKind::Mul => g.iter().zip(va).map(|(&gv, &av)| gv * av).collect(),
                };
                let db = if broadcast {
                    vec![per_elem.into_iter().sum()]
                } else {
                    per_elem
                };
                out.push((b, db));
            }
        }
        &Op::Scale { x, factor } => {
            if wants(x) {
                let f = S::of(factor);
                out.push((x, g.iter().map(|&v| v * f).collect()));
            }
        }
        &Op::AddScalar { x } => {
            if wants(x) {
                out.push((x, g.to_vec()));
            }
        }
        Op::Concat { parts } => {
            let shape = &nodes[i].shape;
            let (n, total) = (shape[0], shape[1]);
            let inner: usize = shape[2..].iter().product();
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p.0].shape[1];
                if wants(p) {
                    let mut dp = Vec::with_capacity(n * c * inner);
                    for s in 0..n {
                        let start = (s * total + offset) * inner;
                        dp.extend_from_slice(&g[start..start + c * inner]);
                    }
                    out.push((p, dp));
                }
                offset += c;
            }
        }
        &Op::ReduceMean { x } => {
            if wants(x) {
                let len = nodes[x.0].value.len();
                let v = g[0] / S::of(len as f64);
                out.push((x, vec![v; len]));
            }
        }
        &Op::Reshape { x } => {
            if wants(x) {
                out.push((x, g.to_vec()));
            }
        }
        &Op::AffineGrid {
            theta,
            height,
            width,
        } => {
            if wants(theta) {
                let batch = nodes[theta.0].shape[0];
                out.push((theta, warp::affine_grid_backward(g, batch, height, width)));
            }
        }
        &Op::BilinearSample { image, grid, geom } => {
            let (di, dg) =
                warp::bilinear_backward(&geom, val(image), val(grid), g, wants(image), wants(grid));
            out.extend(di.map(|d| (image, d)));
            out.extend(dg.map(|d| (grid, d)));
        }
        &Op::Merge {
            images,
            masks,
            dims,
        } => {
            let (di, dm) =
                merge::merge_backward(val(images), val(masks), g, dims, wants(images), wants(masks));
            out.extend(di.map(|d| (images, d)));
            out.extend(dm.map(|d| (masks, d)));
        }
    }
    out
}
