use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default `eps` for both normalizations.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Normalize `x` in place with population statistics; returns `1/sqrt(var+eps)`.
fn standardize(x: &mut [f64], eps: f64) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / libm::sqrt(var + eps);
    x.iter_mut().for_each(|v| *v = (*v - mean) * rstd);
    rstd
}

/// Backprop through `x̂ = (x − μ)·r` given `dx̂` and `x̂`; writes `dx` into `dxhat`.
fn standardize_backward(dxhat: &mut [f64], xhat: &[f64], rstd: f64) {
    let n = xhat.len() as f64;
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n;
    for (d, x) in dxhat.iter_mut().zip(xhat) {
        *d = rstd * (*d - mean_d - x * mean_dx);
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("normalization eps must be positive, got {eps}")))
    }
}

/// Per-row normalization of a `[tokens×d]` tensor followed by `gamma`/`beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    check_eps(eps)?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim(format!(
            "layer_norm: input {:?} with gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = x.clone();
    out.clear_grad();
    for row in out.data_mut().chunks_exact_mut(d) {
        standardize(row, eps);
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Recomputes the row statistics from `x`.
pub fn layer_norm_backward(x: &Tensor, gamma: &Tensor, eps: f64, grad_out: &Tensor) -> Result<LayerNormGrads> {
    let (_, d) = x.dims2()?;
    if grad_out.shape() != x.shape() || gamma.shape() != [d] {
        return Err(Error::dim(format!(
            "layer_norm_backward: input {:?}, gradient {:?}, gamma {:?}",
            x.shape(),
            grad_out.shape(),
            gamma.shape()
        )));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut xhat = vec![0.0; d];
    for ((xrow, grow), drow) in
        x.data().chunks_exact(d).zip(grad_out.data().chunks_exact(d)).zip(dx.data_mut().chunks_exact_mut(d))
    {
        xhat.copy_from_slice(xrow);
        let rstd = standardize(&mut xhat, eps);
        for j in 0..d {
            dgamma[j] += grow[j] * xhat[j];
            dbeta[j] += grow[j];
            drow[j] = grow[j] * gamma.data()[j];
        }
        standardize_backward(drow, &xhat, rstd);
    }
    Ok(LayerNormGrads { x: dx, gamma: Tensor::new(&[d], dgamma)?, beta: Tensor::new(&[d], dbeta)? })
}

/// Normalizes a `[C×H×W]` feature map over all of its entries (a single
/// group), then applies a per-channel affine `gamma[c]`, `beta[c]`.
pub fn channel_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    check_eps(eps)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(format!(
            "channel_norm: input {:?} with gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = x.clone();
    out.clear_grad();
    standardize(out.data_mut(), eps);
    for (ch, plane) in out.data_mut().chunks_exact_mut(h * w).enumerate() {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        plane.iter_mut().for_each(|v| *v = *v * g + b);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ChannelNormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn channel_norm_backward(x: &Tensor, gamma: &Tensor, eps: f64, grad_out: &Tensor) -> Result<ChannelNormGrads> {
    let (c, h, w) = x.dims3()?;
    if grad_out.shape() != x.shape() || gamma.shape() != [c] {
        return Err(Error::dim(format!(
            "channel_norm_backward: input {:?}, gradient {:?}, gamma {:?}",
            x.shape(),
            grad_out.shape(),
            gamma.shape()
        )));
    }
    let mut xhat = x.data().to_vec();
    let rstd = standardize(&mut xhat, eps);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = grad_out.data().to_vec();
    for ch in 0..c {
        let range = ch * h * w..(ch + 1) * h * w;
        let g = gamma.data()[ch];
        for i in range {
            dgamma[ch] += dx[i] * xhat[i];
            dbeta[ch] += dx[i];
            dx[i] *= g;
        }
    }
    standardize_backward(&mut dx, &xhat, rstd);
    Ok(ChannelNormGrads {
        x: Tensor::new(x.shape(), dx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}
