use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a rank-2 tensor, max-subtracted.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, n) = x.dims2()?;
    let mut out = x.clone();
    out.clear_grad();
    for row in out.data_mut().chunks_exact_mut(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - m);
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// `y` is the softmax output. `dx = y ⊙ (g − Σ_j g_j y_j)` per row.
pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (_, n) = y.dims2()?;
    if y.shape() != grad_out.shape() {
        return Err(Error::dim(format!("softmax_backward: {:?} vs {:?}", y.shape(), grad_out.shape())));
    }
    let mut dx = grad_out.clone();
    dx.clear_grad();
    for (drow, yrow) in dx.data_mut().chunks_exact_mut(n).zip(y.data().chunks_exact(n)) {
        let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
        for (g, y) in drow.iter_mut().zip(yrow) {
            *g = y * (*g - dot);
        }
    }
    Ok(dx)
}
