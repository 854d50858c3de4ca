use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Same data, new shape. Backward is a reshape back to the input shape.
pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    Tensor::new(shape, x.data().to_vec())
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn around(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
    let (outer, _, inner) = around(first.shape(), axis)?;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::dim(format!("concat along axis {axis}: {:?} vs {:?}", first.shape(), p.shape())));
        }
    }
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, data)
}

/// Splits `x` into consecutive pieces along `axis`; the inverse of [`concat`].
pub fn split(x: &Tensor, sizes: &[usize], axis: usize) -> Result<Vec<Tensor>> {
    concat_backward(x, sizes, axis)
}

/// Splits `grad_out` back into pieces of the given lengths along `axis`.
pub fn concat_backward(grad_out: &Tensor, sizes: &[usize], axis: usize) -> Result<Vec<Tensor>> {
    let (outer, len, inner) = around(grad_out.shape(), axis)?;
    if sizes.iter().sum::<usize>() != len {
        return Err(Error::dim(format!("split sizes {sizes:?} do not cover axis {axis} of {:?}", grad_out.shape())));
    }
    let mut out: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(outer * s * inner)).collect();
    for o in 0..outer {
        let mut off = o * len * inner;
        for (buf, s) in out.iter_mut().zip(sizes) {
            buf.extend_from_slice(&grad_out.data()[off..off + s * inner]);
            off += s * inner;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &s)| {
            let mut shape = grad_out.shape().to_vec();
            shape[axis] = s;
            Tensor::new(&shape, d)
        })
        .collect()
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

/// Sums out `axis`. A rank-1 input reduces to shape `[1]`.
pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = around(x.shape(), axis)?;
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let src = &x.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    Tensor::new(&reduced_shape(x.shape(), axis), out)
}

/// Broadcasts `grad_out` back along `axis` of `input_shape`.
pub fn sum_axis_backward(grad_out: &Tensor, input_shape: &[usize], axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = around(input_shape, axis)?;
    if grad_out.len() != outer * inner {
        return Err(Error::dim(format!("sum_axis gradient {:?} for input {input_shape:?}", grad_out.shape())));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        for _ in 0..len {
            out.extend_from_slice(&grad_out.data()[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::new(input_shape, out)
}

pub fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let n = x.shape().get(axis).copied().unwrap_or(1) as f64;
    let mut s = sum_axis(x, axis)?;
    s.data_mut().iter_mut().for_each(|v| *v /= n);
    Ok(s)
}

pub fn mean_axis_backward(grad_out: &Tensor, input_shape: &[usize], axis: usize) -> Result<Tensor> {
    let mut g = sum_axis_backward(grad_out, input_shape, axis)?;
    let n = input_shape[axis] as f64;
    g.data_mut().iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

/// Index map for `patchify`: entry `k` of the output is entry `map[k]` of the input.
fn patch_index(c: usize, h: usize, w: usize, grid: (usize, usize)) -> Result<Vec<usize>> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::dim(format!("patch grid {gh}x{gw} does not divide the {h}x{w} plane")));
    }
    let (ph, pw) = (h / gh, w / gw);
    let mut map = Vec::with_capacity(c * h * w);
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for y in 0..ph {
                    for x in 0..pw {
                        map.push((ch * h + gy * ph + y) * w + gx * pw + x);
                    }
                }
            }
        }
    }
    Ok(map)
}

/// `[C×H×W]` → `[(gh·gw)×(C·ph·pw)]` for a `(gh, gw)` grid: one row per
/// non-overlapping patch, patches in row-major grid order, each patch
/// flattened channel-major.
pub fn patchify(x: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let map = patch_index(c, h, w, grid)?;
    let data = map.iter().map(|&i| x.data()[i]).collect();
    Tensor::new(&[grid.0 * grid.1, c * (h / grid.0) * (w / grid.1)], data)
}

pub fn patchify_backward(grad_out: &Tensor, input_shape: &[usize], grid: (usize, usize)) -> Result<Tensor> {
    let [c, h, w] = input_shape[..] else {
        return Err(Error::dim(format!("patchify input must be rank 3, got {input_shape:?}")));
    };
    let map = patch_index(c, h, w, grid)?;
    if grad_out.len() != map.len() {
        return Err(Error::dim("patchify gradient size mismatch"));
    }
    let mut dx = vec![0.0; map.len()];
    for (&i, g) in map.iter().zip(grad_out.data()) {
        dx[i] = *g;
    }
    Tensor::new(input_shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::new(shape, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn concat_rows_then_split() {
        let a = iota(&[2, 3]);
        let b = iota(&[1, 3]);
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[3, 3]);
        assert_eq!(&c.data()[6..], b.data());
        let parts = concat_backward(&c, &[2, 1], 0).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_cols() {
        let a = iota(&[2, 2]);
        let b = iota(&[2, 1]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 0.0, 2.0, 3.0, 1.0]);
        assert!(concat(&[&a, &iota(&[3, 1])], 1).is_err());
    }

    #[test]
    fn sums_and_means() {
        let x = iota(&[2, 3]);
        assert_eq!(sum_axis(&x, 0).unwrap().data(), &[3.0, 5.0, 7.0]);
        assert_eq!(sum_axis(&x, 1).unwrap().data(), &[3.0, 12.0]);
        assert_eq!(mean_axis(&x, 1).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(sum_axis(&iota(&[4]), 0).unwrap().shape(), &[1]);
    }

    #[test]
    fn patchify_layout() {
        // 1 channel 4x4, grid 2 -> 4 patches of 2x2
        let p = patchify(&iota(&[1, 4, 4]), (2, 2)).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
        assert!(patchify(&iota(&[1, 4, 4]), (3, 3)).is_err());
        assert_eq!(patchify(&iota(&[2, 4, 6]), (2, 3)).unwrap().shape(), &[6, 8]);
    }

    #[test]
    fn patchify_backward_is_inverse_permutation() {
        let x = iota(&[2, 6, 6]);
        let p = patchify(&x, (3, 2)).unwrap();
        assert_eq!(patchify_backward(&p, x.shape(), (3, 2)).unwrap(), x);
    }
}
