use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nonlinearity used inside transformer MLPs and the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// Exact (erf) GELU.
    Gelu,
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = x.clone();
    out.clear_grad();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

/// Elementwise sum. Backward passes the upstream gradient to both inputs.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let mut out = a.clone();
    out.clear_grad();
    out.add_assign(b);
    Ok(out)
}

/// `alpha * x`; backward is `alpha * g`.
pub fn scale(x: &Tensor, alpha: f64) -> Tensor {
    map(x, |v| alpha * v)
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at the kink.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    same_shape(x, grad_out, "relu_backward")?;
    let mut dx = grad_out.clone();
    dx.clear_grad();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(dx)
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: &Tensor) -> Tensor {
    map(x, |v| 0.5 * v * (1.0 + libm::erf(v * core::f64::consts::FRAC_1_SQRT_2)))
}

pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    same_shape(x, grad_out, "gelu_backward")?;
    let mut dx = grad_out.clone();
    dx.clear_grad();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let cdf = 0.5 * (1.0 + libm::erf(v * core::f64::consts::FRAC_1_SQRT_2));
        let pdf = FRAC_1_SQRT_2PI * libm::exp(-0.5 * v * v);
        *g *= cdf + v * pdf;
    }
    Ok(dx)
}

pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    match kind {
        Activation::Relu => relu(x),
        Activation::Gelu => gelu(x),
    }
}

/// `x` is the pre-activation input.
pub fn activation_backward(kind: Activation, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    match kind {
        Activation::Relu => relu_backward(x, grad_out),
        Activation::Gelu => gelu_backward(x, grad_out),
    }
}
