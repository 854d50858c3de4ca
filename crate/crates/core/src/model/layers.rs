//! Parameterized layers with cached forward passes and explicit backward passes.
//!
//! Every parameter struct doubles as its own gradient accumulator: backward
//! passes take `&mut Self`-typed gradient buffers created with
//! [`ParamGroup::zeroed`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::params::param_group;
use crate::tensor::Tensor;

/// Settings shared by every transformer layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCtx {
    pub heads: usize,
    pub eps: f64,
    pub activation: Activation,
}

/// `y = x·W + b` on `[n×in]` rows; `weight` is `[in×out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}
param_group!(Linear { weight, bias });

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Tensor::zeros(&[inputs, outputs]), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = ops::matmul(x, &self.weight)?;
        let n = self.bias.len();
        for row in y.data_mut().chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients into `grads`, returns `dL/dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: &mut Linear) -> Result<Tensor> {
        let (dx, dw) = ops::matmul_backward(x, &self.weight, dy)?;
        grads.weight.add_assign(&dw);
        grads.bias.add_assign(&ops::sum_axis(dy, 0)?);
        Ok(dx)
    }
}

/// Affine parameters of a layer or channel normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}
param_group!(Norm { gamma, beta });

impl Norm {
    pub fn identity(d: usize) -> Self {
        Self { gamma: Tensor::full(&[d], 1.0), beta: Tensor::zeros(&[d]) }
    }

    pub fn forward(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        ops::layer_norm(x, &self.gamma, &self.beta, eps)
    }

    pub fn backward(&self, x: &Tensor, eps: f64, dy: &Tensor, grads: &mut Norm) -> Result<Tensor> {
        let g = ops::layer_norm_backward(x, &self.gamma, eps, dy)?;
        grads.gamma.add_assign(&g.gamma);
        grads.beta.add_assign(&g.beta);
        Ok(g.x)
    }
}

/// `linear → activation → linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}
param_group!(Mlp { fc1, fc2 });

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl Mlp {
    pub fn forward(&self, x: &Tensor, activation: Activation) -> Result<(Tensor, MlpCache)> {
        let pre = self.fc1.forward(x)?;
        let act = ops::activation(activation, &pre);
        let out = self.fc2.forward(&act)?;
        Ok((out, MlpCache { x: x.clone(), pre, act }))
    }

    pub fn backward(&self, c: &MlpCache, activation: Activation, dy: &Tensor, grads: &mut Mlp) -> Result<Tensor> {
        let dact = self.fc2.backward(&c.act, dy, &mut grads.fc2)?;
        let dpre = ops::activation_backward(activation, &c.pre, &dact)?;
        self.fc1.backward(&c.x, &dpre, &mut grads.fc1)
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}
param_group!(Attention { query, key, value, out });

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    q: Vec<Tensor>,
    k: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Row-stochastic attention matrix of each head, `[n×n]`.
    pub probs: Vec<Tensor>,
    merged: Tensor,
}

fn head_split(t: &Tensor, heads: usize) -> Result<Vec<Tensor>> {
    let (_, d) = t.dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    ops::split(t, &alloc::vec![d / heads; heads], 1)
}

impl Attention {
    pub fn forward(&self, x: &Tensor, heads: usize) -> Result<(Tensor, AttentionCache)> {
        let q = head_split(&self.query.forward(x)?, heads)?;
        let k = head_split(&self.key.forward(x)?, heads)?;
        let v = head_split(&self.value.forward(x)?, heads)?;
        let scale = 1.0 / libm::sqrt(q[0].shape()[1] as f64);
        let mut probs = Vec::with_capacity(heads);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let scores = ops::scale(&ops::matmul(&q[h], &ops::transpose(&k[h])?)?, scale);
            let p = ops::softmax_rows(&scores)?;
            outs.push(ops::matmul(&p, &v[h])?);
            probs.push(p);
        }
        let merged = ops::concat(&outs.iter().collect::<Vec<_>>(), 1)?;
        let y = self.out.forward(&merged)?;
        Ok((y, AttentionCache { x: x.clone(), q, k, v, probs, merged }))
    }

    pub fn backward(&self, c: &AttentionCache, dy: &Tensor, grads: &mut Attention) -> Result<Tensor> {
        let heads = c.probs.len();
        let scale = 1.0 / libm::sqrt(c.q[0].shape()[1] as f64);
        let dmerged = self.out.backward(&c.merged, dy, &mut grads.out)?;
        let douts = head_split(&dmerged, heads)?;
        let (mut dq, mut dk, mut dv) = (Vec::new(), Vec::new(), Vec::new());
        for h in 0..heads {
            let (dp, dvh) = ops::matmul_backward(&c.probs[h], &c.v[h], &douts[h])?;
            let dscores = ops::scale(&ops::softmax_rows_backward(&c.probs[h], &dp)?, scale);
            // scores = q · kᵀ
            let (dqh, dkt) = ops::matmul_backward(&c.q[h], &ops::transpose(&c.k[h])?, &dscores)?;
            dq.push(dqh);
            dk.push(ops::transpose(&dkt)?);
            dv.push(dvh);
        }
        let cat = |parts: &[Tensor]| ops::concat(&parts.iter().collect::<Vec<_>>(), 1);
        let mut dx = self.query.backward(&c.x, &cat(&dq)?, &mut grads.query)?;
        dx.add_assign(&self.key.backward(&c.x, &cat(&dk)?, &mut grads.key)?);
        dx.add_assign(&self.value.backward(&c.x, &cat(&dv)?, &mut grads.value)?);
        Ok(dx)
    }
}

/// Transformer block
///
/// ```text
/// Y = LN₂(X + MSA(LN₁(X)))
/// out = Y + MLP(Y)            (spatial / temporal blocks)
/// out = X + Y + MLP(Y)        (fusion block with the extra residual)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub mlp: Mlp,
}
param_group!(Block { norm1, attn, norm2, mlp });

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Tensor,
    /// `LN₁(X)`.
    pub normed_in: Tensor,
    pub attn: AttentionCache,
    residual: Tensor,
    /// `Y = LN₂(X + MSA(LN₁(X)))`.
    pub normed_mid: Tensor,
    mlp: MlpCache,
    outer_residual: bool,
}

impl Block {
    pub fn forward(&self, x: &Tensor, ctx: &LayerCtx, outer_residual: bool) -> Result<(Tensor, BlockCache)> {
        let normed_in = self.norm1.forward(x, ctx.eps)?;
        let (a, attn) = self.attn.forward(&normed_in, ctx.heads)?;
        let residual = ops::add(x, &a)?;
        let y = self.norm2.forward(&residual, ctx.eps)?;
        let (m, mlp) = self.mlp.forward(&y, ctx.activation)?;
        let mut out = ops::add(&y, &m)?;
        if outer_residual {
            out.add_assign(x);
        }
        let cache = BlockCache { x: x.clone(), normed_in, attn, residual, normed_mid: y, mlp, outer_residual };
        Ok((out, cache))
    }

    pub fn backward(&self, c: &BlockCache, ctx: &LayerCtx, dout: &Tensor, grads: &mut Block) -> Result<Tensor> {
        let mut dy = self.mlp.backward(&c.mlp, ctx.activation, dout, &mut grads.mlp)?;
        dy.add_assign(dout);
        let dres = self.norm2.backward(&c.residual, ctx.eps, &dy, &mut grads.norm2)?;
        let dnormed = self.attn.backward(&c.attn, &dres, &mut grads.attn)?;
        let mut dx = self.norm1.backward(&c.x, ctx.eps, &dnormed, &mut grads.norm1)?;
        dx.add_assign(&dres);
        if c.outer_residual {
            dx.add_assign(dout);
        }
        Ok(dx)
    }
}
