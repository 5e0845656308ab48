//! Finite-difference verification of every differentiable op.
//!
//! Each [`GradCase`] builds a scalar loss from a handful of random inputs. The
//! analytic gradient comes from an `f32` tape (the training precision); the
//! reference is a central difference of the same graph instantiated in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-3;
/// Largest accepted max relative error per op.
pub const TOLERANCE: f64 = 1e-3;
/// Magnitude below which relative error degrades to absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-3;
/// Seeds tried per op by [`standard_seeds`].
pub const SEEDS_PER_OP: usize = 5;

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h` for every element of `x`.
pub fn finite_difference_gradient(
    f: impl Fn(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    h: f64,
) -> Tensor<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Max over elements of `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub type BuildFn<S> = fn(&mut Tape<S>, &[Var]) -> Result<Var>;

/// One op under test. `inputs` draws random tensors; the flag marks the
/// inputs whose gradient is checked.
#[derive(Clone)]
pub struct GradCase {
    pub name: &'static str,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)>,
    pub build_f32: BuildFn<f32>,
    pub build_f64: BuildFn<f64>,
}

/// Instantiate a generic builder at both precisions.
#[macro_export]
macro_rules! grad_case {
    ($name:expr, $inputs:expr, $build:ident) => {
        $crate::gradcheck::GradCase {
            name: $name,
            inputs: $inputs,
            build_f32: $build::<f32>,
            build_f64: $build::<f64>,
        }
    };
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub seeds: usize,
    pub checked_entries: usize,
    pub finite: bool,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.finite && self.max_rel_error < TOLERANCE
    }
}

pub fn standard_seeds() -> Vec<u64> {
    (0..SEEDS_PER_OP as u64).map(|s| 0x5eed_0000 + s).collect()
}

fn eval_f64(build: BuildFn<f64>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.item(loss))
}

/// Check one case on every seed; errors only on a graph-construction failure.
pub fn check_case(case: &GradCase, seeds: &[u64]) -> Result<CaseReport> {
    let mut report = CaseReport {
        name: case.name,
        max_rel_error: 0.0,
        seeds: seeds.len(),
        checked_entries: 0,
        finite: true,
    };
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Round inputs to f32 so both precisions differentiate the same point.
        let drawn: Vec<(Tensor<f64>, bool)> = (case.inputs)(&mut rng)
            .into_iter()
            .map(|(t, g)| (t.cast::<f32>().cast::<f64>(), g))
            .collect();

        let mut tape = Tape::<f32>::new();
        let vars: Vec<Var> = drawn
            .iter()
            .map(|(t, g)| tape.leaf(t.cast(), *g))
            .collect();
        let loss = (case.build_f32)(&mut tape, &vars)?;
        tape.backward(loss)?;

        let values: Vec<Tensor<f64>> = drawn.iter().map(|(t, _)| t.clone()).collect();
        for (i, (_, differentiate)) in drawn.iter().enumerate() {
            if !*differentiate {
                continue;
            }
            let analytic: Vec<f64> = tape.grad_tensor(vars[i]).data().iter().map(|&v| v as f64).collect();
            report.finite &= analytic.iter().all(|v| v.is_finite());
            let numeric = finite_difference_gradient(
                |x| {
                    let mut probe = values.clone();
                    probe[i] = x.clone();
                    eval_f64(case.build_f64, &probe).unwrap_or(f64::NAN)
                },
                &values[i],
                STEP,
            );
            report.finite &= numeric.all_finite();
            let err = max_relative_error(&analytic, numeric.data(), RELATIVE_FLOOR);
            report.max_rel_error = report.max_rel_error.max(if err.is_nan() { f64::INFINITY } else { err });
            report.checked_entries += analytic.len();
        }
    }
    Ok(report)
}

pub fn run_suite(cases: &[GradCase], seeds: &[u64]) -> Result<Vec<CaseReport>> {
    cases.iter().map(|c| check_case(c, seeds)).collect()
}

/// `Σ out · probe` as a scalar.
pub fn probe_loss<S: Scalar>(tape: &mut Tape<S>, out: Var, probe: Var) -> Result<Var> {
    let weighted = tape.mul(out, probe)?;
    let n = tape.value(weighted).len();
    let mean = tape.reduce_mean(weighted);
    Ok(tape.scale(mean, n as f64))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Uniform values bounded away from zero, for kinked activations.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.random_range(0.05..2.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Normalized coordinate whose pixel position stays at least `margin` away
/// from any integer.
fn off_lattice(extent: usize, margin: f64, rng: &mut ChaCha8Rng) -> f64 {
    let cell = rng.random_range(-1..extent as i64) as f64;
    let frac = rng.random_range(margin..1.0 - margin);
    2.0 * (cell + frac) / (extent - 1) as f64 - 1.0
}

fn distance_to_lattice(x: f64) -> f64 {
    (x - x.round()).abs()
}

// ---------------------------------------------------------------------------
// Builders. The last input is always the probe.

fn conv2d_s2<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
    probe_loss(t, y, v[3])
}

fn conv2d_s1<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.conv2d(v[0], v[1], v[2], 1, 0)?;
    probe_loss(t, y, v[3])
}

fn conv_transpose<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.conv_transpose2d(v[0], v[1], v[2], 2, 1)?;
    probe_loss(t, y, v[3])
}

fn dense<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.dense(v[0], v[1], v[2])?;
    probe_loss(t, y, v[3])
}

fn leaky<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.leaky_relu(v[0], 0.2);
    probe_loss(t, y, v[1])
}

fn tanh<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.tanh(v[0]);
    probe_loss(t, y, v[1])
}

fn sigmoid<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.sigmoid(v[0]);
    probe_loss(t, y, v[1])
}

fn square(x: f64) -> f64 {
    x * x
}

fn square_derivative(x: f64) -> f64 {
    2.0 * x
}

fn map_square<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.map(v[0], square, square_derivative);
    probe_loss(t, y, v[1])
}

fn softmax<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.softmax_channels(v[0])?;
    probe_loss(t, y, v[1])
}

fn add<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.add(v[0], v[1])?;
    probe_loss(t, y, v[2])
}

fn sub<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.sub(v[0], v[1])?;
    probe_loss(t, y, v[2])
}

fn mul<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.mul(v[0], v[1])?;
    probe_loss(t, y, v[2])
}

fn scale<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.scale(v[0], -1.7);
    let y = t.add_scalar(y, 0.3);
    probe_loss(t, y, v[1])
}

fn concat<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.concat_channels(&[v[0], v[1], v[2]])?;
    probe_loss(t, y, v[3])
}

fn mean<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let sq = t.mul(v[0], v[0])?;
    Ok(t.reduce_mean(sq))
}

fn reshape<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.reshape(v[0], [3, 8])?;
    probe_loss(t, y, v[1])
}

fn grid<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.affine_grid(v[0], 4, 5)?;
    probe_loss(t, y, v[1])
}

fn sample<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.bilinear_sample(v[0], v[1])?;
    probe_loss(t, y, v[2])
}

fn warp<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.warp(v[0], v[1])?;
    probe_loss(t, y, v[2])
}

fn merge<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let y = t.merge_masked(v[0], v[1])?;
    probe_loss(t, y, v[2])
}

/// Sampler, softmax masks and merge chained the way the generator uses them.
fn warp_merge<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let warped = t.warp(v[0], v[1])?;
    let masks = t.softmax_channels(v[2])?;
    let y = t.merge_masked(warped, masks)?;
    probe_loss(t, y, v[3])
}

fn composite<S: Scalar>(t: &mut Tape<S>, v: &[Var]) -> Result<Var> {
    let h = t.conv2d(v[0], v[1], v[2], 2, 1)?;
    let h = t.leaky_relu(h, 0.2);
    let n = t.shape(h)[0];
    let flat = t.value(h).len() / n;
    let h = t.reshape(h, [n, flat])?;
    let y = t.dense(h, v[3], v[4])?;
    let y = t.tanh(y);
    let y = t.mul(y, v[5])?;
    Ok(t.reduce_mean(y))
}

// ---------------------------------------------------------------------------
// Input generators.

fn conv2d_s2_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 2, 5, 5], -1.0, 1.0, r), true),
        (uniform(&[3, 2, 3, 3], -1.0, 1.0, r), true),
        (uniform(&[3], -1.0, 1.0, r), true),
        (uniform(&[2, 3, 3, 3], -1.0, 1.0, r), false),
    ]
}

fn conv2d_s1_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[1, 3, 4, 5], -1.0, 1.0, r), true),
        (uniform(&[2, 3, 2, 3], -1.0, 1.0, r), true),
        (uniform(&[2], -1.0, 1.0, r), true),
        (uniform(&[1, 2, 3, 3], -1.0, 1.0, r), false),
    ]
}

fn conv_transpose_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 3, 3, 3], -1.0, 1.0, r), true),
        (uniform(&[3, 2, 4, 4], -1.0, 1.0, r), true),
        (uniform(&[2], -1.0, 1.0, r), true),
        (uniform(&[2, 2, 6, 6], -1.0, 1.0, r), false),
    ]
}

fn dense_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[3, 4], -1.0, 1.0, r), true),
        (uniform(&[5, 4], -1.0, 1.0, r), true),
        (uniform(&[5], -1.0, 1.0, r), true),
        (uniform(&[3, 5], -1.0, 1.0, r), false),
    ]
}

fn kinked_unary_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (away_from_zero(&[2, 3, 4], r), true),
        (uniform(&[2, 3, 4], -1.0, 1.0, r), false),
    ]
}

fn unary_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 3, 4], -3.0, 3.0, r), true),
        (uniform(&[2, 3, 4], -1.0, 1.0, r), false),
    ]
}

fn softmax_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 4, 2, 3], -3.0, 3.0, r), true),
        (uniform(&[2, 4, 2, 3], -1.0, 1.0, r), false),
    ]
}

fn binary_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 3, 4], -2.0, 2.0, r), true),
        (uniform(&[2, 3, 4], -2.0, 2.0, r), true),
        (uniform(&[2, 3, 4], -1.0, 1.0, r), false),
    ]
}

fn broadcast_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 3, 4], -2.0, 2.0, r), true),
        (uniform(&[1], -2.0, 2.0, r), true),
        (uniform(&[2, 3, 4], -1.0, 1.0, r), false),
    ]
}

fn concat_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 1, 3, 2], -1.0, 1.0, r), true),
        (uniform(&[2, 2, 3, 2], -1.0, 1.0, r), true),
        (uniform(&[2, 1, 3, 2], -1.0, 1.0, r), true),
        (uniform(&[2, 4, 3, 2], -1.0, 1.0, r), false),
    ]
}

fn mean_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![(uniform(&[3, 5], -2.0, 2.0, r), true)]
}

fn reshape_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[2, 3, 4], -1.0, 1.0, r), true),
        (uniform(&[3, 8], -1.0, 1.0, r), false),
    ]
}

fn random_theta(batch: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn([batch, 6], |i| {
        let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0][i % 6];
        identity + r.random_range(-0.3..0.3)
    })
}

fn grid_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (random_theta(2, r), true),
        (uniform(&[2, 4, 5, 2], -1.0, 1.0, r), false),
    ]
}

fn sample_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    // Two source images, each read by two 3x4 grids.
    let (h, w) = (5, 6);
    let grid = Tensor::from_fn([4, 3, 4, 2], |i| {
        if i % 2 == 0 {
            off_lattice(w, 0.05, r)
        } else {
            off_lattice(h, 0.05, r)
        }
    });
    vec![
        (uniform(&[2, 2, h, w], 0.0, 1.0, r), true),
        (grid, true),
        (uniform(&[4, 2, 3, 4], -1.0, 1.0, r), false),
    ]
}

/// Redraw `theta` until, for every coordinate perturbation of size `STEP`,
/// no sample crosses a pixel boundary.
fn theta_off_kinks(batch: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    // |∂x_pix/∂θ| ≤ (W-1)/2 per unit coordinate, times |x| ≤ 1.
    let margin = 2.0 * STEP * (w.max(h) - 1) as f64 / 2.0;
    loop {
        let theta = random_theta(batch, r);
        let grid = crate::warp::affine_grid_forward(theta.data(), batch, h, w);
        let clear = grid.chunks(2).all(|xy| {
            let xp = crate::warp::pixel_coord(xy[0], w);
            let yp = crate::warp::pixel_coord(xy[1], h);
            distance_to_lattice(xp) > margin && distance_to_lattice(yp) > margin
        });
        if clear {
            return theta;
        }
    }
}

fn warp_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![
        (uniform(&[1, 1, 8, 8], 0.0, 1.0, r), true),
        (theta_off_kinks(1, 8, 8, r), true),
        (uniform(&[1, 1, 8, 8], -1.0, 1.0, r), false),
    ]
}

fn merge_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    let masks = crate::autodiff::softmax_channels_forward(
        uniform(&[2, 3, 3, 4], -2.0, 2.0, r).data(),
        2,
        3,
        12,
    );
    vec![
        (uniform(&[6, 2, 3, 4], 0.0, 1.0, r), true),
        (Tensor::new([2, 3, 3, 4], masks).unwrap(), true),
        (uniform(&[2, 2, 3, 4], -1.0, 1.0, r), false),
    ]
}

fn warp_merge_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    // Two frames, three layers each.
    vec![
        (uniform(&[2, 2, 6, 6], 0.0, 1.0, r), true),
        (theta_off_kinks(6, 6, 6, r), true),
        (uniform(&[2, 3, 6, 6], -2.0, 2.0, r), true),
        (uniform(&[2, 2, 6, 6], -1.0, 1.0, r), false),
    ]
}

fn composite_inputs(r: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    loop {
        let x = uniform(&[2, 2, 6, 6], -1.0, 1.0, r);
        let w = uniform(&[3, 2, 4, 4], -0.5, 0.5, r);
        let b = uniform(&[3], -0.2, 0.2, r);
        // Keep every conv pre-activation clear of the leaky_relu kink.
        let mut tape = Tape::<f64>::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
        );
        let pre = tape.conv2d(xv, wv, bv, 2, 1).expect("valid geometry");
        if tape.value(pre).iter().any(|v| v.abs() < 0.02) {
            continue;
        }
        return vec![
            (x, true),
            (w, true),
            (b, true),
            (uniform(&[4, 27], -0.5, 0.5, r), true),
            (uniform(&[4], -0.5, 0.5, r), true),
            (uniform(&[2, 4], -1.0, 1.0, r), false),
        ];
    }
}

/// Every differentiable op plus the compositions the generator relies on.
pub fn standard_suite() -> Vec<GradCase> {
    vec![
        grad_case!("conv2d (stride 2, padding 1)", conv2d_s2_inputs, conv2d_s2),
        grad_case!("conv2d (stride 1, padding 0)", conv2d_s1_inputs, conv2d_s1),
        grad_case!("transposed_conv2d", conv_transpose_inputs, conv_transpose),
        grad_case!("dense", dense_inputs, dense),
        grad_case!("leaky_relu(0.2)", kinked_unary_inputs, leaky),
        grad_case!("tanh", unary_inputs, tanh),
        grad_case!("sigmoid", unary_inputs, sigmoid),
        grad_case!("map(x^2)", unary_inputs, map_square),
        grad_case!("softmax_channels", softmax_inputs, softmax),
        grad_case!("add", binary_inputs, add),
        grad_case!("sub", binary_inputs, sub),
        grad_case!("mul", binary_inputs, mul),
        grad_case!("mul (scalar broadcast)", broadcast_inputs, mul),
        grad_case!("scale + add_scalar", unary_inputs, scale),
        grad_case!("concat_channels", concat_inputs, concat),
        grad_case!("reduce_mean", mean_inputs, mean),
        grad_case!("reshape", reshape_inputs, reshape),
        grad_case!("affine_grid (6 params)", grid_inputs, grid),
        grad_case!("bilinear_sample (image, grid)", sample_inputs, sample),
        grad_case!("warp (image, 6 params)", warp_inputs, warp),
        grad_case!("merge_masked (images, masks)", merge_inputs, merge),
        grad_case!("warp + softmax + merge", warp_merge_inputs, warp_merge),
        grad_case!("conv2d > leaky_relu > dense > tanh > mean", composite_inputs, composite),
    ]
}
