//! Finite-difference verification of every backward pass, run in `f64`.
//!
//! Each check builds a scalar objective `L = sum(op(x) * R)` with a random
//! projection `R`, computes the analytic gradient through the op's backward
//! pass, and compares it element-wise with central differences.

use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::model::{se_backward, se_forward, Model, ResNetConfig, SeWeights};
use crate::ops::*;
use crate::rng::RngStream;
use crate::tensor::{Mode, Tensor};

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Step for the whole-network check. Each weight there feeds thousands of
/// relu units, and a 1e-5 step pushes some of them across the kink.
pub const MODEL_EPSILON: f64 = 1e-6;

/// Gradients smaller than this are compared absolutely rather than
/// relatively.
const DENOMINATOR_FLOOR: f64 = 1e-6;

pub const OPS: [&str; 10] = [
    "conv2d",
    "batchnorm",
    "linear",
    "avgpool",
    "relu",
    "sigmoid",
    "dropout",
    "se",
    "cross_entropy",
    "model",
];

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    /// Input shape of each randomly drawn case.
    pub shapes: Vec<Vec<usize>>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for the
/// coordinates in `coords` (all coordinates when `None`).
pub fn central_difference(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Vec<f64> {
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(DENOMINATOR_FLOOR))
        .fold(0.0, f64::max)
}

/// `max_i |a_i - n_i| / max_i max(|a_i|, |n_i|)`: error relative to the
/// largest gradient entry of the tensor rather than to each entry.
pub fn normwise_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(DENOMINATOR_FLOOR);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rand_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_in(-1.0, 1.0))
}

fn pick(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u32) as usize
}

fn with_data(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), data.to_vec()).expect("same shape")
}

/// Compares the analytic gradient of `objective` with respect to `x`
/// against central differences.
fn compare(analytic: &[f64], x: &Tensor<f64>, objective: &mut dyn FnMut(&Tensor<f64>) -> f64) -> f64 {
    let numeric = central_difference(&mut |d| objective(&with_data(x, d)), x.data(), EPSILON, None);
    max_relative_error(analytic, &numeric)
}

pub fn check_op(op: &str, cases: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed);
    let mut report = GradCheckReport {
        op: op.to_string(),
        shapes: Vec::with_capacity(cases),
        max_rel_error: 0.0,
    };
    for _ in 0..cases {
        let (shape, err) = match op {
            "conv2d" => conv_case(&mut rng)?,
            "batchnorm" => batchnorm_case(&mut rng)?,
            "linear" => linear_case(&mut rng)?,
            "avgpool" => avgpool_case(&mut rng)?,
            "relu" => relu_case(&mut rng)?,
            "sigmoid" => sigmoid_case(&mut rng)?,
            "dropout" => dropout_case(&mut rng)?,
            "se" => se_case(&mut rng)?,
            "cross_entropy" => cross_entropy_case(&mut rng)?,
            "model" => model_case(&mut rng)?,
            other => {
                return Err(Error::Usage(format!(
                    "unknown op {other:?}; expected one of {}",
                    OPS.join(", ")
                )))
            }
        };
        report.shapes.push(shape);
        report.max_rel_error = report.max_rel_error.max(err);
    }
    Ok(report)
}

pub fn check_all(cases: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    OPS.iter().map(|op| check_op(op, cases, seed)).collect()
}

type Case = (Vec<usize>, f64);

fn conv_case(rng: &mut RngStream) -> Result<Case> {
    let k = [1, 3, 5][rng.below(3) as usize];
    let stride = pick(rng, 1, 2);
    let padding = pick(rng, 0, k / 2);
    let h = pick(rng, k.max(3), 6);
    let (n, cin, cout) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3));
    let x = rand_tensor(&[n, cin, h, h], rng);
    let w = rand_tensor(&[cout, cin, k, k], rng);
    let out_shape = conv2d_forward(&x, &w, stride, padding)?.shape().to_vec();
    let r = rand_tensor(&out_shape, rng);
    let (gi, gw) = conv2d_backward(&r, &x, &w, stride, padding)?;
    let e1 = compare(gi.data(), &x, &mut |xp| dot(conv2d_forward(xp, &w, stride, padding).unwrap().data(), r.data()));
    let e2 = compare(gw.data(), &w, &mut |wp| dot(conv2d_forward(&x, wp, stride, padding).unwrap().data(), r.data()));
    Ok((x.shape().to_vec(), e1.max(e2)))
}

fn batchnorm_case(rng: &mut RngStream) -> Result<Case> {
    let shape = [pick(rng, 2, 3), pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)];
    let c = shape[1];
    let x = rand_tensor(&shape, rng);
    let gamma = rand_tensor(&[c], rng);
    let beta = rand_tensor(&[c], rng);
    let r = rand_tensor(&shape, rng);
    let eval = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        let mut running = RunningStats::new(c);
        let (y, _) =
            batchnorm_forward_with(x, g.data(), b.data(), &mut running, 0.1, DEFAULT_EPS, Mode::Train).unwrap();
        dot(y.data(), r.data())
    };
    let mut running = RunningStats::new(c);
    let (_, cache) = batchnorm_forward_with(&x, gamma.data(), beta.data(), &mut running, 0.1, DEFAULT_EPS, Mode::Train)?;
    let (gi, gg, gb) = batchnorm_backward(&r, &cache, gamma.data())?;
    let e1 = compare(gi.data(), &x, &mut |xp| eval(xp, &gamma, &beta));
    let e2 = compare(&gg, &gamma, &mut |gp| eval(&x, gp, &beta));
    let e3 = compare(&gb, &beta, &mut |bp| eval(&x, &gamma, bp));
    Ok((shape.to_vec(), e1.max(e2).max(e3)))
}

fn linear_case(rng: &mut RngStream) -> Result<Case> {
    let (n, d, m) = (pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 4));
    let x = rand_tensor(&[n, d], rng);
    let w = rand_tensor(&[d, m], rng);
    let b = rand_tensor(&[m], rng);
    let r = rand_tensor(&[n, m], rng);
    let (gi, gw, gb) = linear_backward(&r, &x, &w)?;
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(linear_forward(x, w, b).unwrap().data(), r.data());
    let e1 = compare(gi.data(), &x, &mut |p| f(p, &w, &b));
    let e2 = compare(gw.data(), &w, &mut |p| f(&x, p, &b));
    let e3 = compare(gb.data(), &b, &mut |p| f(&x, &w, p));
    Ok((x.shape().to_vec(), e1.max(e2).max(e3)))
}

fn avgpool_case(rng: &mut RngStream) -> Result<Case> {
    let p = pick(rng, 1, 3);
    let shape = [pick(rng, 1, 2), pick(rng, 1, 3), p * pick(rng, 1, 2), p * pick(rng, 1, 2)];
    let x = rand_tensor(&shape, rng);
    let out = avgpool_forward(&x, p)?;
    let r = rand_tensor(out.shape(), rng);
    let gi = avgpool_backward(&r, &shape, p)?;
    let e = compare(gi.data(), &x, &mut |xp| dot(avgpool_forward(xp, p).unwrap().data(), r.data()));
    Ok((shape.to_vec(), e))
}

fn relu_case(rng: &mut RngStream) -> Result<Case> {
    let shape = [pick(rng, 1, 3), pick(rng, 2, 6)];
    // keep samples away from the kink at 0
    let x = Tensor::from_fn(shape, |_| {
        let mag = rng.uniform_in(0.1, 1.0);
        if rng.bernoulli(0.5) {
            mag
        } else {
            -mag
        }
    });
    let r = rand_tensor(&shape, rng);
    let gi = relu_backward(&r, &x)?;
    let e = compare(gi.data(), &x, &mut |xp| dot(relu(xp).data(), r.data()));
    Ok((shape.to_vec(), e))
}

fn sigmoid_case(rng: &mut RngStream) -> Result<Case> {
    let shape = [pick(rng, 1, 3), pick(rng, 2, 6)];
    let x = Tensor::from_fn(shape, |_| rng.uniform_in(-4.0, 4.0));
    let r = rand_tensor(&shape, rng);
    let gi = sigmoid_backward(&r, &sigmoid(&x))?;
    let e = compare(gi.data(), &x, &mut |xp| dot(sigmoid(xp).data(), r.data()));
    Ok((shape.to_vec(), e))
}

fn dropout_case(rng: &mut RngStream) -> Result<Case> {
    let shape = [pick(rng, 1, 3), pick(rng, 2, 8)];
    let x = rand_tensor(&shape, rng);
    let p = rng.uniform_in(0.2, 0.6);
    let (_, mask) = dropout_forward(&x, p, Some(rng), Mode::Train)?;
    let mask = mask.expect("train-mode dropout with p > 0 has a mask");
    let r = rand_tensor(&shape, rng);
    let gi = dropout_backward(&r, Some(&mask))?;
    let e = compare(gi.data(), &x, &mut |xp| dot(dropout_apply(xp, &mask).unwrap().data(), r.data()));
    Ok((shape.to_vec(), e))
}

fn se_case(rng: &mut RngStream) -> Result<Case> {
    let c = [2, 4, 6][rng.below(3) as usize];
    let ratio = [1, 2][rng.below(2) as usize];
    let hidden = c / ratio;
    let shape = [pick(rng, 1, 2), c, pick(rng, 2, 4), pick(rng, 2, 4)];
    let x = rand_tensor(&shape, rng);
    let w1 = rand_tensor(&[c, hidden], rng);
    let b1 = rand_tensor(&[hidden], rng);
    let w2 = rand_tensor(&[hidden, c], rng);
    let b2 = rand_tensor(&[c], rng);
    let r = rand_tensor(&shape, rng);
    let f = |x: &Tensor<f64>, w1: &Tensor<f64>, b1: &Tensor<f64>, w2: &Tensor<f64>, b2: &Tensor<f64>| {
        let w = SeWeights {
            fc1_weight: w1,
            fc1_bias: b1,
            fc2_weight: w2,
            fc2_bias: b2,
        };
        dot(se_forward(x, w, false).unwrap().0.data(), r.data())
    };
    let weights = SeWeights {
        fc1_weight: &w1,
        fc1_bias: &b1,
        fc2_weight: &w2,
        fc2_bias: &b2,
    };
    let (_, cache) = se_forward(&x, weights, false)?;
    let g = se_backward(&r, &cache, weights)?;
    let errs = [
        compare(g.input.data(), &x, &mut |p| f(p, &w1, &b1, &w2, &b2)),
        compare(g.fc1_weight.data(), &w1, &mut |p| f(&x, p, &b1, &w2, &b2)),
        compare(g.fc1_bias.data(), &b1, &mut |p| f(&x, &w1, p, &w2, &b2)),
        compare(g.fc2_weight.data(), &w2, &mut |p| f(&x, &w1, &b1, p, &b2)),
        compare(g.fc2_bias.data(), &b2, &mut |p| f(&x, &w1, &b1, &w2, p)),
    ];
    Ok((shape.to_vec(), errs.into_iter().fold(0.0, f64::max)))
}

fn cross_entropy_case(rng: &mut RngStream) -> Result<Case> {
    let (n, k) = (pick(rng, 1, 4), pick(rng, 2, 10));
    let logits = Tensor::from_fn([n, k], |_| rng.uniform_in(-3.0, 3.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u32) as usize).collect();
    let (_, g) = softmax_cross_entropy(&logits, &labels)?;
    let e = compare(g.data(), &logits, &mut |l| softmax_cross_entropy(l, &labels).unwrap().0);
    Ok((vec![n, k], e))
}

/// End-to-end check through a small residual network (train-mode BN,
/// projection shortcut, squeeze-excitation), on a random sample of input
/// and parameter coordinates.
fn model_case(rng: &mut RngStream) -> Result<Case> {
    const SAMPLES: usize = 12;
    let mut cfg = ResNetConfig::uniform(vec![1, 1], vec![2, 4], [1, 3][rng.below(2) as usize], [1, 3][rng.below(2) as usize])?;
    cfg.se_enabled = rng.bernoulli(0.5);
    cfg.se_ratio = 2;
    cfg.num_classes = 3;
    let mut model = Model::<f64>::build(&cfg, &InitScheme::he(), rng)?;
    // Positive BN shifts and SE biases keep relu inputs well away from the
    // kink, where central differences are meaningless; relu itself is
    // checked on its own.
    for p in model.params_mut().iter_mut() {
        let shift = p.name.ends_with(".beta") || p.name.ends_with("fc1.bias");
        let scale = p.name.ends_with(".gamma");
        if shift || scale {
            let (lo, hi) = if shift { (2.0, 3.0) } else { (0.5, 1.0) };
            let vals: Vec<f64> = (0..p.tensor.numel()).map(|_| rng.uniform_in(lo, hi)).collect();
            p.tensor.data_mut().copy_from_slice(&vals);
        }
    }
    let x = rand_tensor(&[2, 3, 32, 32], rng);
    let r = rand_tensor(&[2, cfg.num_classes], rng);

    let logits = model.forward(&x, Mode::Train, None)?;
    debug_assert_eq!(logits.shape(), r.shape());
    model.zero_grads();
    let gx = model.backward(&r)?;

    // Objective evaluations use batch statistics, like the pass being checked.
    let objective = |m: &mut Model<f64>, x: &Tensor<f64>| dot(m.forward(x, Mode::Train, None).unwrap().data(), r.data());

    let coords: Vec<usize> = (0..SAMPLES).map(|_| rng.below(x.numel() as u32) as usize).collect();
    let mut probe = model.clone();
    let mut numeric =
        central_difference(&mut |d| objective(&mut probe, &with_data(&x, d)), x.data(), MODEL_EPSILON, Some(&coords));
    let mut analytic: Vec<f64> = coords.iter().map(|&i| gx.data()[i]).collect();

    for idx in 0..model.params().len() {
        let p = model.params().get(idx).expect("in range");
        let values = p.tensor.data().to_vec();
        let grad = p.tensor.grad().expect("allocated").to_vec();
        let coords: Vec<usize> = (0..SAMPLES.min(values.len())).map(|_| rng.below(values.len() as u32) as usize).collect();
        let mut probe = model.clone();
        numeric.extend(central_difference(
            &mut |d| {
                probe.params_mut().set_values(idx, d).unwrap();
                objective(&mut probe, &x)
            },
            &values,
            MODEL_EPSILON,
            Some(&coords),
        ));
        analytic.extend(coords.iter().map(|&i| grad[i]));
    }
    // Some gradients are exactly zero in theory (a BN shift followed by
    // another BN), so errors are measured against the network-wide scale.
    let err = normwise_relative_error(&analytic, &numeric);
    Ok((x.shape().to_vec(), err))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let mut f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let g = central_difference(&mut f, &[2.0, 5.0], 1e-5, None);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor_for_tiny_values() {
        assert_eq!(max_relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert!(max_relative_error(&[1e-9], &[0.0]) < 1e-2);
    }

    #[test]
    fn unknown_op_is_usage_error() {
        assert!(matches!(check_op("maxpool", 1, 0), Err(Error::Usage(_))));
    }
}
