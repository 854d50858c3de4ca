//! Central finite-difference oracle for analytic gradients.
//!
//! A [`ParamGroup`] value exposes an ordered list of tensors. The caller
//! attaches the analytic gradient to each tensor's `grad` slot, and
//! [`grad_check`] perturbs the data coordinate by coordinate and compares
//! `(f(p+h) − f(p−h)) / 2h` against it using the error measure
//! `|a − n| / max(1, |a|, |n|)`.
//!
//! [`check_primitive`] builds a randomized case for each kernel in
//! [`crate::ops`] and runs it through the same oracle.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, Params};
use crate::ops::{self, Activation};
use crate::params::ParamGroup;
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;
use crate::training;

/// Which coordinates to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    All,
    /// Up to `per_tensor` random coordinates from every tensor.
    PerTensor {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tol: f64,
    /// Largest error seen per tensor, in parameter order.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / 1f64.max(libm::fabs(analytic)).max(libm::fabs(numeric))
}

pub const MIN_STEP: f64 = 1e-6;
pub const MAX_STEP: f64 = 1e-4;

/// Compares attached analytic gradients with central differences of `f`.
///
/// Every tensor in `params` must carry a gradient. A non-finite value of
/// `f` at any probe point is reported as [`Error::Oracle`].
pub fn grad_check<P, F>(f: F, params: &P, h: f64, tol: f64, sampling: Sampling) -> Result<GradCheckReport>
where
    P: ParamGroup,
    F: Fn(&P) -> f64,
{
    if !(MIN_STEP..=MAX_STEP).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [{MIN_STEP}, {MAX_STEP}]")));
    }
    let mut work = params.clone();
    let named = params.named_tensors();
    let mut sampler = match sampling {
        Sampling::All => None,
        Sampling::PerTensor { count, seed } => Some((count, rng::seeded(seed))),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol,
        per_tensor: Vec::with_capacity(named.len()),
    };

    for (ti, (name, tensor)) in named.iter().enumerate() {
        let grad = tensor.grad().ok_or_else(|| Error::Oracle(format!("no analytic gradient attached to {name}")))?;
        let coords: Vec<usize> = match &mut sampler {
            None => (0..tensor.len()).collect(),
            Some((count, rng)) if *count < tensor.len() => {
                let mut idx = rng::permutation(rng, tensor.len());
                idx.truncate(*count);
                idx.sort_unstable();
                idx
            }
            Some(_) => (0..tensor.len()).collect(),
        };
        let mut worst_here = 0.0f64;
        for &i in &coords {
            let orig = tensor.data()[i];
            work.tensors_mut()[ti].data_mut()[i] = orig + h;
            let fp = f(&work);
            work.tensors_mut()[ti].data_mut()[i] = orig - h;
            let fm = f(&work);
            work.tensors_mut()[ti].data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Oracle(format!("objective is not finite when perturbing {name}[{i}] ({fp}, {fm})")));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(grad[i], numeric);
            if err.is_nan() {
                return Err(Error::Oracle(format!("analytic gradient of {name}[{i}] is not finite")));
            }
            worst_here = worst_here.max(err);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
            report.checked += 1;
        }
        report.per_tensor.push((name.clone(), worst_here));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Randomized primitive cases
// ---------------------------------------------------------------------------

/// Names accepted by [`check_primitive`].
pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "scale",
    "relu",
    "gelu",
    "softmax_rows",
    "layer_norm",
    "channel_norm",
    "conv2d",
    "add_channel_bias",
    "reshape",
    "concat",
    "sum_axis",
    "mean_axis",
    "patchify",
];

type Forward = Box<dyn Fn(&[Tensor]) -> Tensor>;

struct Case {
    inputs: Vec<Tensor>,
    forward: Forward,
    /// Gradients of `Σ forward(inputs) ⊙ upstream` w.r.t. each input.
    grads: Vec<Tensor>,
    upstream: Tensor,
}

fn dim(rng: &mut SeededRng) -> usize {
    rng.random_range(1..=6)
}

fn random_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform(rng, -1.5, 1.5)).collect()).unwrap()
}

/// Random entries kept at least `gap` away from zero, for kinked functions.
fn away_from_zero(rng: &mut SeededRng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap - v.abs() } else { gap + *v };
        }
    }
    t
}

fn case(rng: &mut SeededRng, name: &str) -> Result<Case> {
    let mk = |inputs: Vec<Tensor>,
              forward: Forward,
              backward: &dyn Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
              rng: &mut SeededRng|
     -> Result<Case> {
        let out = forward(&inputs);
        let upstream = random_tensor(rng, out.shape());
        let grads = backward(&inputs, &upstream)?;
        Ok(Case { inputs, forward, grads, upstream })
    };
    let (m, k, n) = (dim(rng), dim(rng), dim(rng));
    match name {
        "matmul" => {
            let inputs = vec![random_tensor(rng, &[m, k]), random_tensor(rng, &[k, n])];
            mk(
                inputs,
                Box::new(|x| ops::matmul(&x[0], &x[1]).unwrap()),
                &|x, g| {
                    let (a, b) = ops::matmul_backward(&x[0], &x[1], g)?;
                    Ok(vec![a, b])
                },
                rng,
            )
        }
        "transpose" => mk(
            vec![random_tensor(rng, &[m, n])],
            Box::new(|x| ops::transpose(&x[0]).unwrap()),
            &|_, g| Ok(vec![ops::transpose(g)?]),
            rng,
        ),
        "add" => mk(
            vec![random_tensor(rng, &[m, n]), random_tensor(rng, &[m, n])],
            Box::new(|x| ops::add(&x[0], &x[1]).unwrap()),
            &|_, g| Ok(vec![g.clone(), g.clone()]),
            rng,
        ),
        "scale" => {
            let alpha = rng::uniform(rng, -3.0, 3.0);
            mk(
                vec![random_tensor(rng, &[m, n])],
                Box::new(move |x| ops::scale(&x[0], alpha)),
                &move |_, g| Ok(vec![ops::scale(g, alpha)]),
                rng,
            )
        }
        "relu" => mk(
            vec![away_from_zero(rng, &[m, n], 1e-2)],
            Box::new(|x| ops::activation(Activation::Relu, &x[0])),
            &|x, g| Ok(vec![ops::relu_backward(&x[0], g)?]),
            rng,
        ),
        "gelu" => mk(
            vec![random_tensor(rng, &[m, n])],
            Box::new(|x| ops::activation(Activation::Gelu, &x[0])),
            &|x, g| Ok(vec![ops::gelu_backward(&x[0], g)?]),
            rng,
        ),
        "softmax_rows" => mk(
            vec![random_tensor(rng, &[m, n])],
            Box::new(|x| ops::softmax_rows(&x[0]).unwrap()),
            &|x, g| Ok(vec![ops::softmax_rows_backward(&ops::softmax_rows(&x[0])?, g)?]),
            rng,
        ),
        "layer_norm" => {
            let d = rng.random_range(2..=6);
            let inputs = vec![random_tensor(rng, &[m, d]), random_tensor(rng, &[d]), random_tensor(rng, &[d])];
            mk(
                inputs,
                Box::new(|x| ops::layer_norm(&x[0], &x[1], &x[2], ops::DEFAULT_EPS).unwrap()),
                &|x, g| {
                    let r = ops::layer_norm_backward(&x[0], &x[1], ops::DEFAULT_EPS, g)?;
                    Ok(vec![r.x, r.gamma, r.beta])
                },
                rng,
            )
        }
        "channel_norm" => {
            let c = dim(rng);
            let inputs = vec![random_tensor(rng, &[c, m, n]), random_tensor(rng, &[c]), random_tensor(rng, &[c])];
            mk(
                inputs,
                Box::new(|x| ops::channel_norm(&x[0], &x[1], &x[2], ops::DEFAULT_EPS).unwrap()),
                &|x, g| {
                    let r = ops::channel_norm_backward(&x[0], &x[1], ops::DEFAULT_EPS, g)?;
                    Ok(vec![r.x, r.gamma, r.beta])
                },
                rng,
            )
        }
        "conv2d" => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
            let kh = rng.random_range(1..=3);
            let kw = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let padding = rng.random_range(0..=1);
            let inputs = vec![random_tensor(rng, &[cin, h, w]), random_tensor(rng, &[cout, cin, kh, kw])];
            mk(
                inputs,
                Box::new(move |x| ops::conv2d(&x[0], &x[1], stride, padding).unwrap()),
                &move |x, g| {
                    let (dx, dw) = ops::conv2d_backward(&x[0], &x[1], stride, padding, g)?;
                    Ok(vec![dx, dw])
                },
                rng,
            )
        }
        "add_channel_bias" => {
            let c = dim(rng);
            mk(
                vec![random_tensor(rng, &[c, m, n]), random_tensor(rng, &[c])],
                Box::new(|x| ops::add_channel_bias(&x[0], &x[1]).unwrap()),
                &|_, g| Ok(vec![g.clone(), ops::add_channel_bias_backward(g)?]),
                rng,
            )
        }
        "reshape" => {
            let shape = [m * n];
            mk(
                vec![random_tensor(rng, &[m, n])],
                Box::new(move |x| ops::reshape(&x[0], &shape).unwrap()),
                &move |_, g| Ok(vec![ops::reshape(g, &[m, n])?]),
                rng,
            )
        }
        "concat" => {
            let axis = rng.random_range(0..2);
            let (s0, s1) = if axis == 0 { ([m, n], [k, n]) } else { ([m, n], [m, k]) };
            mk(
                vec![random_tensor(rng, &s0), random_tensor(rng, &s1)],
                Box::new(move |x| ops::concat(&[&x[0], &x[1]], axis).unwrap()),
                &move |x, g| ops::concat_backward(g, &[x[0].shape()[axis], x[1].shape()[axis]], axis),
                rng,
            )
        }
        "sum_axis" | "mean_axis" => {
            let mean = name == "mean_axis";
            let axis = rng.random_range(0..3);
            let shape = [m, k, n];
            mk(
                vec![random_tensor(rng, &shape)],
                Box::new(move |x| if mean { ops::mean_axis(&x[0], axis) } else { ops::sum_axis(&x[0], axis) }.unwrap()),
                &move |_, g| {
                    Ok(vec![if mean {
                        ops::mean_axis_backward(g, &shape, axis)?
                    } else {
                        ops::sum_axis_backward(g, &shape, axis)?
                    }])
                },
                rng,
            )
        }
        "patchify" => {
            let grid = (rng.random_range(1..=3), rng.random_range(1..=3));
            let (ph, pw) = (rng.random_range(1..=2), rng.random_range(1..=2));
            let shape = [rng.random_range(1..=3), grid.0 * ph, grid.1 * pw];
            mk(
                vec![random_tensor(rng, &shape)],
                Box::new(move |x| ops::patchify(&x[0], grid).unwrap()),
                &move |_, g| Ok(vec![ops::patchify_backward(g, &shape, grid)?]),
                rng,
            )
        }
        other => Err(Error::Config(format!("unknown primitive {other:?}"))),
    }
}

/// Runs the finite-difference oracle on one randomized case of a primitive.
///
/// `flip_sign` negates the analytic gradient before the comparison; it
/// exists so the harness itself can be shown to catch a broken backward.
pub fn check_primitive(name: &str, seed: u64, h: f64, tol: f64, flip_sign: bool) -> Result<GradCheckReport> {
    let mut rng = rng::seeded(rng::mix(&[seed, name.len() as u64, name.as_bytes()[0] as u64]));
    let Case { mut inputs, forward, grads, upstream } = case(&mut rng, name)?;
    for (t, g) in inputs.iter_mut().zip(grads) {
        if t.shape() != g.shape() {
            return Err(Error::Oracle(format!("{name}: gradient shape {:?} for input {:?}", g.shape(), t.shape())));
        }
        let mut g = g.into_data();
        if flip_sign {
            g.iter_mut().for_each(|v| *v = -*v);
        }
        t.set_grad(g);
    }
    let objective = move |x: &Vec<Tensor>| -> f64 {
        let y = forward(x);
        y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };
    grad_check(objective, &inputs, h, tol, Sampling::All)
}

/// End-to-end check of the mean cross-entropy of a two-sample batch with
/// respect to every model parameter.
///
/// The initial weights are tiny and most biases start at zero, which would
/// let many wiring mistakes through, so every non-norm parameter is first
/// shifted by uniform noise in `[-0.4, 0.4]`.
pub fn check_model(cfg: &ModelConfig, seed: u64, h: f64, tol: f64, sampling: Sampling) -> Result<GradCheckReport> {
    let mut rng = rng::seeded(rng::mix(&[seed, 0x6d6f64656c]));
    let mut params = model::init_params(cfg, seed)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if !name.contains("norm") {
            t.data_mut().iter_mut().for_each(|v| *v += rng::uniform(&mut rng, -0.4, 0.4));
        }
    }
    let shape = [cfg.frames, 2, cfg.height, cfg.width];
    let frames = [random_tensor(&mut rng, &shape), random_tensor(&mut rng, &shape)];
    let frames: Vec<Tensor> =
        frames.into_iter().map(|t| ops::scale(&ops::add(&t, &Tensor::full(&shape, 1.5)).unwrap(), 0.5)).collect();
    let refs: Vec<&Tensor> = frames.iter().collect();
    let labels = [rng.random_range(0..cfg.num_classes), rng.random_range(0..cfg.num_classes)];
    let (_, _, grads) = training::batch_loss_and_grad(&params, cfg, &refs, &labels)?;
    params.attach_grads(&grads);
    let objective = |p: &Params| training::batch_loss(p, cfg, &refs, &labels).unwrap_or(f64::NAN);
    grad_check(objective, &params, h, tol, sampling)
}
