use alloc::format;
use alloc::vec::Vec;

use super::layers::{Block, BlockCache, LayerCtx, MlpCache};
use super::{Dims, Embed, ModelConfig, Params, Stem, EMBED_STRIDE, PADDING};
use crate::error::{Error, Result, StageExt};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct StemCache {
    frame: Tensor,
    conv1: Tensor,
    norm1: Tensor,
    act1: Tensor,
    conv2: Tensor,
    norm2: Tensor,
}

/// Intermediate values of one forward pass, enough to run [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Dims,
    stem: Vec<StemCache>,
    features: Vec<Tensor>,
    temporal_rows: Tensor,
    patches: Tensor,
    temporal_pre: Vec<BlockCache>,
    spatial_pre: Vec<BlockCache>,
    fusion: Option<BlockCache>,
    temporal_post: Vec<BlockCache>,
    spatial_post: Vec<BlockCache>,
    head: MlpCache,
    /// Temporal and spatial tokens entering the head, `[T×d]` and `[N×d]`.
    pub temporal_out: Tensor,
    pub spatial_out: Tensor,
    /// Fusion output split back into the two branches, when fusion ran.
    pub fused: Option<(Tensor, Tensor)>,
    /// `[num_classes]`.
    pub logits: Tensor,
}

impl ForwardCache {
    fn blocks(&self) -> impl Iterator<Item = &BlockCache> {
        self.temporal_pre
            .iter()
            .chain(&self.spatial_pre)
            .chain(self.fusion.iter())
            .chain(&self.temporal_post)
            .chain(&self.spatial_post)
    }

    /// Every attention matrix computed in the pass, one per block and head.
    pub fn attention_maps(&self) -> impl Iterator<Item = &Tensor> {
        self.blocks().flat_map(|b| b.attn.probs.iter())
    }

    /// Outputs of every layer normalization in the pass (both per block).
    pub fn layer_norm_outputs(&self) -> impl Iterator<Item = &Tensor> {
        self.blocks().flat_map(|b| [&b.normed_in, &b.normed_mid])
    }
}

// ---------------------------------------------------------------------------
// Stem
// ---------------------------------------------------------------------------

fn stem_frame(stem: &Stem, frame: Tensor, cfg: &ModelConfig) -> Result<(Tensor, StemCache)> {
    let eps = cfg.norm_eps;
    let conv1 = ops::conv2d(&frame, &stem.conv1, cfg.stem_strides[0], PADDING)?;
    let norm1 = ops::channel_norm(&conv1, &stem.norm1.gamma, &stem.norm1.beta, eps)?;
    let act1 = ops::relu(&norm1);
    let conv2 = ops::conv2d(&act1, &stem.conv2, cfg.stem_strides[1], PADDING)?;
    let norm2 = ops::channel_norm(&conv2, &stem.norm2.gamma, &stem.norm2.beta, eps)?;
    let out = ops::relu(&norm2);
    Ok((out, StemCache { frame, conv1, norm1, act1, conv2, norm2 }))
}

fn stem_frame_backward(stem: &Stem, c: &StemCache, cfg: &ModelConfig, dout: &Tensor, g: &mut Stem) -> Result<()> {
    let eps = cfg.norm_eps;
    let dnorm2 = ops::relu_backward(&c.norm2, dout)?;
    let n2 = ops::channel_norm_backward(&c.conv2, &stem.norm2.gamma, eps, &dnorm2)?;
    g.norm2.gamma.add_assign(&n2.gamma);
    g.norm2.beta.add_assign(&n2.beta);
    let (dact1, dw2) = ops::conv2d_backward(&c.act1, &stem.conv2, cfg.stem_strides[1], PADDING, &n2.x)?;
    g.conv2.add_assign(&dw2);
    let dnorm1 = ops::relu_backward(&c.norm1, &dact1)?;
    let n1 = ops::channel_norm_backward(&c.conv1, &stem.norm1.gamma, eps, &dnorm1)?;
    g.norm1.gamma.add_assign(&n1.gamma);
    g.norm1.beta.add_assign(&n1.beta);
    let (_, dw1) = ops::conv2d_backward(&c.frame, &stem.conv1, cfg.stem_strides[0], PADDING, &n1.x)?;
    g.conv1.add_assign(&dw1);
    Ok(())
}

fn split_frames(frames: &Tensor, cfg: &ModelConfig) -> Result<Vec<Tensor>> {
    let expected = [cfg.frames, 2, cfg.height, cfg.width];
    if frames.shape() != expected {
        return Err(Error::Dim(format!("input frames {:?}, model expects {expected:?}", frames.shape())));
    }
    let per = 2 * cfg.height * cfg.width;
    frames.data().chunks_exact(per).map(|c| Tensor::new(&[2, cfg.height, cfg.width], c.to_vec())).collect()
}

fn stack(frames: &[Tensor]) -> Result<Tensor> {
    let mut shape = alloc::vec![frames.len()];
    shape.extend_from_slice(frames[0].shape());
    Tensor::new(&shape, frames.iter().flat_map(|f| f.data().iter().copied()).collect())
}

fn unstack(x: &Tensor) -> Result<Vec<Tensor>> {
    let inner = &x.shape()[1..];
    let n: usize = inner.iter().product();
    x.data().chunks_exact(n).map(|c| Tensor::new(inner, c.to_vec())).collect()
}

/// Runs the shared stem on every frame: `[T×2×H×W] → [T×c×h×w]`.
pub fn stem_forward(frames: &Tensor, p: &Params, cfg: &ModelConfig) -> Result<Tensor> {
    let mut outs = Vec::with_capacity(cfg.frames);
    for f in split_frames(frames, cfg)? {
        outs.push(stem_frame(&p.stem, f, cfg)?.0);
    }
    stack(&outs)
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

fn embed_conv(e: &Embed, x: &Tensor) -> Result<Tensor> {
    ops::add_channel_bias(&ops::conv2d(x, &e.conv, EMBED_STRIDE, PADDING)?, &e.conv_bias)
}

/// Accumulates conv weight/bias gradients and adds `dL/dx` into `dx`.
fn embed_conv_backward(e: &Embed, x: &Tensor, dy: &Tensor, g: &mut Embed, dx: &mut Tensor) -> Result<()> {
    let (dxi, dw) = ops::conv2d_backward(x, &e.conv, EMBED_STRIDE, PADDING, dy)?;
    g.conv.add_assign(&dw);
    g.conv_bias.add_assign(&ops::add_channel_bias_backward(dy)?);
    dx.add_assign(&dxi);
    Ok(())
}

fn temporal_embed(e: &Embed, features: &[Tensor]) -> Result<(Tensor, Tensor)> {
    let mut rows = Vec::with_capacity(features.len());
    for x in features {
        rows.push(embed_conv(e, x)?);
    }
    let n = rows[0].len();
    let rows = Tensor::new(&[rows.len(), n], rows.into_iter().flat_map(Tensor::into_data).collect())?;
    Ok((e.proj.forward(&rows)?, rows))
}

fn spatial_embed(e: &Embed, features: &[Tensor], dims: &Dims) -> Result<(Tensor, Tensor)> {
    let mut sum = embed_conv(e, &features[0])?;
    for x in &features[1..] {
        sum.add_assign(&embed_conv(e, x)?);
    }
    let patches = ops::patchify(&sum, (dims.grid_h, dims.grid_w))?;
    Ok((e.proj.forward(&patches)?, patches))
}

/// Temporal tokens `[T×d]` from stem features `[T×c×h×w]`, one per frame.
pub fn embed_temporal(x: &Tensor, p: &Params, cfg: &ModelConfig) -> Result<Tensor> {
    cfg.validate()?;
    Ok(temporal_embed(&p.temporal_embed, &unstack(x)?)?.0)
}

/// Spatial tokens `[N×d]`: per-frame conv, summed over time, cut into patches.
pub fn embed_spatial(x: &Tensor, p: &Params, cfg: &ModelConfig) -> Result<Tensor> {
    let dims = cfg.dims()?;
    Ok(spatial_embed(&p.spatial_embed, &unstack(x)?, &dims)?.0)
}

/// Elementwise sum of tokens and a position table of the same shape.
pub fn add_position(tokens: &Tensor, table: &Tensor) -> Result<Tensor> {
    ops::add(tokens, table)
}

// ---------------------------------------------------------------------------
// Transformer stages
// ---------------------------------------------------------------------------

fn run_stage(blocks: &[Block], x: Tensor, ctx: &LayerCtx) -> Result<(Tensor, Vec<BlockCache>)> {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut x = x;
    for b in blocks {
        let (y, c) = b.forward(&x, ctx, false)?;
        caches.push(c);
        x = y;
    }
    Ok((x, caches))
}

fn stage_backward(
    blocks: &[Block],
    caches: &[BlockCache],
    ctx: &LayerCtx,
    dout: Tensor,
    grads: &mut [Block],
) -> Result<Tensor> {
    let mut d = dout;
    for ((b, c), g) in blocks.iter().zip(caches).zip(grads.iter_mut()).rev() {
        d = b.backward(c, ctx, &d, g)?;
    }
    Ok(d)
}

/// Spatial stage: `depth` blocks of `Y = LN(X + MSA(LN(X)))`, `X̃ = Y + MLP(Y)`.
pub fn spatial_stage(x: &Tensor, blocks: &[Block], cfg: &ModelConfig) -> Result<Tensor> {
    Ok(run_stage(blocks, x.clone(), &cfg.layer_ctx())?.0)
}

/// Temporal stage; same block structure as the spatial one.
pub fn temporal_stage(x: &Tensor, blocks: &[Block], cfg: &ModelConfig) -> Result<Tensor> {
    Ok(run_stage(blocks, x.clone(), &cfg.layer_ctx())?.0)
}

/// Concatenates `[T×d]` and `[N×d]` tokens, runs the fusion block over all
/// `T+N` of them and splits the result back.
pub fn fusion_block(xt: &Tensor, xs: &Tensor, block: &Block, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let (zt, zs, _) = fuse(xt, xs, block, cfg)?;
    Ok((zt, zs))
}

fn fuse(xt: &Tensor, xs: &Tensor, block: &Block, cfg: &ModelConfig) -> Result<(Tensor, Tensor, BlockCache)> {
    let (t, _) = xt.dims2()?;
    let (n, _) = xs.dims2()?;
    let z = ops::concat(&[xt, xs], 0)?;
    let (out, cache) = block.forward(&z, &cfg.layer_ctx(), cfg.fusion_double_residual)?;
    let mut parts = ops::split(&out, &[t, n], 0)?;
    let zs = parts.pop().unwrap();
    let zt = parts.pop().unwrap();
    Ok((zt, zs, cache))
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Forward pass keeping every intermediate needed by [`backward`].
pub fn forward_cached(frames: &Tensor, p: &Params, cfg: &ModelConfig) -> Result<ForwardCache> {
    let dims = cfg.dims().stage("config")?;
    let ctx = cfg.layer_ctx();
    let comp = cfg.components;

    let mut stem = Vec::with_capacity(cfg.frames);
    let mut features = Vec::with_capacity(cfg.frames);
    for f in split_frames(frames, cfg).stage("stem")? {
        let (x, c) = stem_frame(&p.stem, f, cfg).stage("stem")?;
        features.push(x);
        stem.push(c);
    }

    let (xt, temporal_rows) = temporal_embed(&p.temporal_embed, &features).stage("temporal embedding")?;
    let (xs, patches) = spatial_embed(&p.spatial_embed, &features, &dims).stage("spatial embedding")?;
    let xt = add_position(&xt, &p.temporal_pos).stage("temporal position")?;
    let xs = add_position(&xs, &p.spatial_pos).stage("spatial position")?;

    let (xt, temporal_pre) = if comp.temporal {
        run_stage(&p.temporal_blocks, xt, &ctx).stage("temporal blocks")?
    } else {
        (xt, Vec::new())
    };
    let (xs, spatial_pre) =
        if comp.spatial { run_stage(&p.spatial_blocks, xs, &ctx).stage("spatial blocks")? } else { (xs, Vec::new()) };

    let (zt, zs, fusion, fused) = if comp.fusion {
        let (zt, zs, c) = fuse(&xt, &xs, &p.fusion, cfg).stage("fusion block")?;
        let fused = Some((zt.clone(), zs.clone()));
        (zt, zs, Some(c), fused)
    } else {
        (xt, xs, None, None)
    };

    let temporal_post_blocks = p.temporal_post.as_deref().unwrap_or(&p.temporal_blocks);
    let spatial_post_blocks = p.spatial_post.as_deref().unwrap_or(&p.spatial_blocks);
    let (ft, temporal_post) = if comp.temporal {
        run_stage(temporal_post_blocks, zt, &ctx).stage("post-fusion temporal blocks")?
    } else {
        (zt, Vec::new())
    };
    let (fs, spatial_post) = if comp.spatial {
        run_stage(spatial_post_blocks, zs, &ctx).stage("post-fusion spatial blocks")?
    } else {
        (zs, Vec::new())
    };

    let joined = ops::concat(&[&ft, &fs], 0).stage("head")?;
    let head_input = ops::reshape(&joined, &[1, joined.len()]).stage("head")?;
    let (logits, head) = p.head.forward(&head_input, cfg.activation).stage("head")?;
    let logits = ops::reshape(&logits, &[cfg.num_classes]).stage("head")?;

    Ok(ForwardCache {
        dims,
        stem,
        features,
        temporal_rows,
        patches,
        temporal_pre,
        spatial_pre,
        fusion,
        temporal_post,
        spatial_post,
        head,
        temporal_out: ft,
        spatial_out: fs,
        fused,
        logits,
    })
}

/// Class logits `[num_classes]` for one frame stack `[T×2×H×W]`.
pub fn forward(frames: &Tensor, p: &Params, cfg: &ModelConfig) -> Result<Tensor> {
    Ok(forward_cached(frames, p, cfg)?.logits)
}

/// Backpropagates `dL/dlogits` through the cached pass, accumulating every
/// parameter gradient into `grads` (which must have the layout of `p`).
pub fn backward(
    p: &Params,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    dlogits: &Tensor,
    grads: &mut Params,
) -> Result<()> {
    let ctx = cfg.layer_ctx();
    let comp = cfg.components;
    let dims = &cache.dims;
    let (t, n) = (cfg.frames, dims.tokens);

    let dlogits = ops::reshape(dlogits, &[1, cfg.num_classes])?;
    let dhead = p.head.backward(&cache.head, cfg.activation, &dlogits, &mut grads.head)?;
    let djoined = ops::reshape(&dhead, &[t + n, cfg.dim])?;
    let mut parts = ops::split(&djoined, &[t, n], 0)?;
    let mut dzs = parts.pop().unwrap();
    let mut dzt = parts.pop().unwrap();

    if comp.temporal {
        let blocks = p.temporal_post.as_deref().unwrap_or(&p.temporal_blocks);
        let g = match grads.temporal_post.as_mut() {
            Some(g) => g,
            None => &mut grads.temporal_blocks,
        };
        dzt = stage_backward(blocks, &cache.temporal_post, &ctx, dzt, g)?;
    }
    if comp.spatial {
        let blocks = p.spatial_post.as_deref().unwrap_or(&p.spatial_blocks);
        let g = match grads.spatial_post.as_mut() {
            Some(g) => g,
            None => &mut grads.spatial_blocks,
        };
        dzs = stage_backward(blocks, &cache.spatial_post, &ctx, dzs, g)?;
    }

    let (mut dxt, mut dxs) = match &cache.fusion {
        Some(c) => {
            let dz = ops::concat(&[&dzt, &dzs], 0)?;
            let dx = p.fusion.backward(c, &ctx, &dz, &mut grads.fusion)?;
            let mut parts = ops::split(&dx, &[t, n], 0)?;
            let dxs = parts.pop().unwrap();
            (parts.pop().unwrap(), dxs)
        }
        None => (dzt, dzs),
    };

    if comp.temporal {
        dxt = stage_backward(&p.temporal_blocks, &cache.temporal_pre, &ctx, dxt, &mut grads.temporal_blocks)?;
    }
    if comp.spatial {
        dxs = stage_backward(&p.spatial_blocks, &cache.spatial_pre, &ctx, dxs, &mut grads.spatial_blocks)?;
    }
    grads.temporal_pos.add_assign(&dxt);
    grads.spatial_pos.add_assign(&dxs);

    let mut dfeatures: Vec<Tensor> = cache.features.iter().map(Tensor::zeros_like).collect();

    // temporal branch: row t of the projection input is the flattened conv of frame t
    let drows = p.temporal_embed.proj.backward(&cache.temporal_rows, &dxt, &mut grads.temporal_embed.proj)?;
    let conv_shape = [cfg.temporal_channels, dims.embed_h, dims.embed_w];
    for (i, (x, dx)) in cache.features.iter().zip(dfeatures.iter_mut()).enumerate() {
        let dy = Tensor::new(&conv_shape, drows.row(i).to_vec())?;
        embed_conv_backward(&p.temporal_embed, x, &dy, &mut grads.temporal_embed, dx)?;
    }

    // spatial branch: the time sum hands the same gradient to every frame
    let dpatches = p.spatial_embed.proj.backward(&cache.patches, &dxs, &mut grads.spatial_embed.proj)?;
    let sum_shape = [cfg.spatial_channels, dims.embed_h, dims.embed_w];
    let dsum = ops::patchify_backward(&dpatches, &sum_shape, (dims.grid_h, dims.grid_w))?;
    for (x, dx) in cache.features.iter().zip(dfeatures.iter_mut()) {
        embed_conv_backward(&p.spatial_embed, x, &dsum, &mut grads.spatial_embed, dx)?;
    }

    for (c, dx) in cache.stem.iter().zip(&dfeatures) {
        stem_frame_backward(&p.stem, c, cfg, dx, &mut grads.stem)?;
    }
    Ok(())
}
