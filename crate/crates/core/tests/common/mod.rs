#![allow(dead_code)]

use estf_core::model::{init_params, ModelConfig, Params};
use estf_core::params::ParamGroup;
use estf_core::rng;
use estf_core::Tensor;

/// Adds uniform noise to every weight so that backward bugs cannot hide
/// behind tiny init values. Norm parameters stay at the identity.
pub fn spread(p: &mut Params, seed: u64, amount: f64) {
    let mut r = rng::seeded(seed);
    let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        if name.contains("norm") {
            continue;
        }
        for v in t.data_mut() {
            *v += rng::uniform(&mut r, -amount, amount);
        }
    }
}

pub fn random_params(cfg: &ModelConfig, seed: u64) -> Params {
    let mut p = init_params(cfg, seed).unwrap();
    spread(&mut p, seed ^ 0xabc, 0.3);
    p
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform(&mut r, lo, hi)).collect()).unwrap()
}

pub fn random_frames(cfg: &ModelConfig, seed: u64) -> Tensor {
    random_tensor(&[cfg.frames, 2, cfg.height, cfg.width], seed, 0.0, 2.0)
}

/// Row-wise standardization written out longhand.
pub fn layer_norm_oracle(x: &Tensor, eps: f64) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        out.extend(row.iter().map(|v| (v - mean) / (var + eps).sqrt()));
    }
    Tensor::new(&[n, d], out).unwrap()
}

pub fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let shape = x.shape().to_vec();
    let per: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(x.len());
    for &i in perm {
        data.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    Tensor::new(&shape, data).unwrap()
}
