use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output length along one axis, or `None` when the kernel does not fit.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Geometry> {
    let (cin, h, w) = x.dims3()?;
    let [cout, wcin, kh, kw] = weight.shape()[..] else {
        return Err(Error::dim(format!("conv2d weight must be rank 4, got {:?}", weight.shape())));
    };
    if wcin != cin {
        return Err(Error::dim(format!(
            "conv2d input {:?} has {cin} channels, weight {:?} expects {wcin}",
            x.shape(),
            weight.shape()
        )));
    }
    let (Some(oh), Some(ow)) = (conv_out_len(h, kh, stride, padding), conv_out_len(w, kw, stride, padding)) else {
        return Err(Error::dim(format!(
            "conv2d kernel {kh}x{kw} (stride {stride}, padding {padding}) does not fit input {:?}",
            x.shape()
        )));
    };
    Ok(Geometry { cin, h, w, cout, kh, kw, oh, ow })
}

/// Output columns `[lo, hi)` whose input column `ox·stride + k − padding`
/// lies inside `[0, len)`.
fn valid_range(len: usize, out: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(k).div_ceil(stride);
    let hi = if len + padding > k { ((len + padding - k - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Calls `f(col_row, in_row, x_lo, lo, hi)` for every patch row `r` of the
/// unrolled input and every output row `oy`: unrolled entries
/// `col_row + lo..col_row + hi` read input `in_row + x_lo + j·stride`.
#[inline]
fn for_each_span(g: &Geometry, stride: usize, padding: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let plane = g.oh * g.ow;
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            let (ylo, yhi) = valid_range(g.h, g.oh, ky, stride, padding);
            for kx in 0..g.kw {
                let (lo, hi) = valid_range(g.w, g.ow, kx, stride, padding);
                if lo >= hi {
                    continue;
                }
                let r = (ci * g.kh + ky) * g.kw + kx;
                let x_lo = lo * stride + kx - padding;
                for oy in ylo..yhi {
                    let iy = oy * stride + ky - padding;
                    f(r * plane + oy * g.ow, (ci * g.h + iy) * g.w, x_lo, lo, hi);
                }
            }
        }
    }
}

/// Four running sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Unrolled input, `[cin·kh·kw × oh·ow]`, zero where the kernel hangs over
/// the padding.
fn im2col(g: &Geometry, x: &[f64], stride: usize, padding: usize) -> Vec<f64> {
    let mut cols = vec![0.0; g.cin * g.kh * g.kw * g.oh * g.ow];
    for_each_span(g, stride, padding, |c, i, x_lo, lo, hi| {
        for (dst, src) in cols[c + lo..c + hi].iter_mut().zip(x[i + x_lo..].iter().step_by(stride)) {
            *dst = *src;
        }
    });
    cols
}

/// 2-D cross-correlation with zero padding, no bias.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry(x, weight, stride, padding)?;
    let cols = im2col(&g, x.data(), stride, padding);
    let plane = g.oh * g.ow;
    let taps = g.cin * g.kh * g.kw;
    let mut out = vec![0.0; g.cout * plane];
    for (orow, wrow) in out.chunks_exact_mut(plane).zip(weight.data().chunks_exact(taps)) {
        for (w, crow) in wrow.iter().zip(cols.chunks_exact(plane)) {
            for (y, c) in orow.iter_mut().zip(crow) {
                *y += w * c;
            }
        }
    }
    Tensor::new(&[g.cout, g.oh, g.ow], out)
}

/// Returns `(dL/dx, dL/dweight)`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let g = geometry(x, weight, stride, padding)?;
    if grad_out.shape() != [g.cout, g.oh, g.ow] {
        return Err(Error::dim(format!(
            "conv2d gradient {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            g.cout,
            g.oh,
            g.ow
        )));
    }
    let cols = im2col(&g, x.data(), stride, padding);
    let plane = g.oh * g.ow;
    let taps = g.cin * g.kh * g.kw;
    let (wd, gd) = (weight.data(), grad_out.data());
    let mut dw = vec![0.0; weight.len()];
    let mut dcols = vec![0.0; cols.len()];
    for ((grow, wrow), dwrow) in gd.chunks_exact(plane).zip(wd.chunks_exact(taps)).zip(dw.chunks_exact_mut(taps)) {
        for ((w, dwv), (crow, dcrow)) in
            wrow.iter().zip(dwrow.iter_mut()).zip(cols.chunks_exact(plane).zip(dcols.chunks_exact_mut(plane)))
        {
            *dwv += dot(grow, crow);
            for (dc, gv) in dcrow.iter_mut().zip(grow) {
                *dc += gv * w;
            }
        }
    }
    let mut dx = vec![0.0; x.len()];
    for_each_span(&g, stride, padding, |c, i, x_lo, lo, hi| {
        for (j, v) in dcols[c + lo..c + hi].iter().enumerate() {
            dx[i + x_lo + j * stride] += v;
        }
    });
    Ok((Tensor::new(x.shape(), dx)?, Tensor::new(weight.shape(), dw)?))
}

/// Adds `bias[c]` to every entry of channel `c` of a `[C×H×W]` map.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if bias.shape() != [c] {
        return Err(Error::dim(format!("channel bias {:?} for input {:?}", bias.shape(), x.shape())));
    }
    let mut out = x.clone();
    out.clear_grad();
    for (plane, b) in out.data_mut().chunks_exact_mut(h * w).zip(bias.data()) {
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

/// Gradient w.r.t. the bias; the input gradient is `grad_out` itself.
pub fn add_channel_bias_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = grad_out.dims3()?;
    let sums = grad_out.data().chunks_exact(h * w).map(|p| p.iter().sum()).collect();
    Tensor::new(&[c], sums)
}
