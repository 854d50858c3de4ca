//! The dual-branch event transformer.
//!
//! Pipeline per sample:
//!
//! ```text
//! frames [T×2×H×W]
//!   └ stem (conv–norm–relu ×2, shared across frames)     → X  [T×c×h×w]
//!       ├ temporal: conv/2 per frame, flatten, project    → Xᵗ [T×d]
//!       └ spatial:  conv/2 per frame, sum over T, patches → Xˢ [N×d]
//!   + learned position tables
//!   temporal blocks ∥ spatial blocks
//!   fusion block over the T+N concatenated tokens, split back
//!   post-fusion temporal blocks ∥ spatial blocks
//!   concat, flatten, two-layer MLP head                   → logits [num_classes]
//! ```

mod estf;
pub mod layers;

use alloc::format;
use alloc::vec::Vec;

pub use estf::{
    add_position, backward, embed_spatial, embed_temporal, forward, forward_cached, fusion_block, spatial_stage,
    stem_forward, temporal_stage, ForwardCache,
};
pub use layers::{Attention, Block, LayerCtx, Linear, Mlp, Norm};

use crate::error::{Error, Result};
use crate::ops::{conv_out_len, Activation, DEFAULT_EPS};
use crate::params::{param_group, ParamGroup};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

/// Kernel size of every convolution in the stem and the embeddings.
pub const KERNEL: usize = 3;
/// Zero padding of every convolution.
pub const PADDING: usize = 1;
/// Stride of the two embedding convolutions.
pub const EMBED_STRIDE: usize = 2;

/// How the summed spatial feature plane is cut into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Patch {
    /// `n×n` grid of patches, so `N = n²` tokens.
    Grid(usize),
    /// Square patches of side `n` pixels.
    Size(usize),
}

/// Which transformer stages run. A disabled stage passes its input through
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub temporal: bool,
    pub spatial: bool,
    pub fusion: bool,
}

impl Components {
    pub const ALL: Components = Components { temporal: true, spatial: true, fusion: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub stem_channels: [usize; 2],
    pub stem_strides: [usize; 2],
    pub temporal_channels: usize,
    pub spatial_channels: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Blocks per spatial/temporal stage.
    pub depth: usize,
    pub patch: Patch,
    pub num_classes: usize,
    pub activation: Activation,
    pub norm_eps: f64,
    /// Fusion output `Z + Y + MLP(Y)` instead of `Y + MLP(Y)`.
    pub fusion_double_residual: bool,
    /// Post-fusion stages reuse the pre-fusion block weights.
    pub share_post_fusion: bool,
    pub components: Components,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            stem_channels: [8, 16],
            stem_strides: [2, 2],
            temporal_channels: 8,
            spatial_channels: 16,
            dim: 32,
            heads: 4,
            mlp_ratio: 2,
            depth: 1,
            patch: Patch::Grid(4),
            num_classes: 10,
            activation: Activation::Relu,
            norm_eps: DEFAULT_EPS,
            fusion_double_residual: true,
            share_post_fusion: false,
            components: Components::ALL,
        }
    }
}

/// Derived sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Stem output plane.
    pub stem_h: usize,
    pub stem_w: usize,
    /// Embedding conv output plane.
    pub embed_h: usize,
    pub embed_w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Spatial tokens `N`.
    pub tokens: usize,
    pub temporal_features: usize,
    pub patch_features: usize,
}

impl ModelConfig {
    /// The small configuration used for end-to-end gradient checks.
    pub fn toy() -> Self {
        Self {
            frames: 4,
            height: 8,
            width: 8,
            stem_channels: [4, 4],
            stem_strides: [1, 2],
            temporal_channels: 4,
            spatial_channels: 4,
            dim: 16,
            heads: 2,
            mlp_ratio: 2,
            depth: 1,
            patch: Patch::Grid(2),
            num_classes: 4,
            ..Self::default()
        }
    }

    pub fn layer_ctx(&self) -> LayerCtx {
        LayerCtx { heads: self.heads, eps: self.norm_eps, activation: self.activation }
    }

    pub fn dims(&self) -> Result<Dims> {
        let positive = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("stem channel 1", self.stem_channels[0]),
            ("stem channel 2", self.stem_channels[1]),
            ("stem stride 1", self.stem_strides[0]),
            ("stem stride 2", self.stem_strides[1]),
            ("temporal channels", self.temporal_channels),
            ("spatial channels", self.spatial_channels),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp ratio", self.mlp_ratio),
            ("depth", self.depth),
            ("classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} is not divisible by {} heads", self.dim, self.heads)));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config(format!("norm eps {} must be positive", self.norm_eps)));
        }
        let out = |len: usize, stride: usize| {
            conv_out_len(len, KERNEL, stride, PADDING)
                .ok_or_else(|| Error::Config(format!("plane of {len} is too small for the convolution")))
        };
        let (s1, s2) = (self.stem_strides[0], self.stem_strides[1]);
        let stem_h = out(out(self.height, s1)?, s2)?;
        let stem_w = out(out(self.width, s1)?, s2)?;
        let embed_h = out(stem_h, EMBED_STRIDE)?;
        let embed_w = out(stem_w, EMBED_STRIDE)?;
        let (grid_h, grid_w) = match self.patch {
            Patch::Grid(n) => (n, n),
            Patch::Size(p) if p > 0 && embed_h % p == 0 && embed_w % p == 0 => (embed_h / p, embed_w / p),
            Patch::Size(p) => {
                return Err(Error::Config(format!(
                    "patch size {p} does not divide the {embed_h}x{embed_w} feature plane"
                )))
            }
        };
        if grid_h == 0 || grid_w == 0 || embed_h % grid_h != 0 || embed_w % grid_w != 0 {
            return Err(Error::Config(format!(
                "patch grid {grid_h}x{grid_w} does not divide the {embed_h}x{embed_w} feature plane"
            )));
        }
        Ok(Dims {
            stem_h,
            stem_w,
            embed_h,
            embed_w,
            grid_h,
            grid_w,
            tokens: grid_h * grid_w,
            temporal_features: self.temporal_channels * embed_h * embed_w,
            patch_features: self.spatial_channels * (embed_h / grid_h) * (embed_w / grid_w),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map(|_| ())
    }
}

/// Per-frame convolutional feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    pub conv1: Tensor,
    pub norm1: Norm,
    pub conv2: Tensor,
    pub norm2: Norm,
}
param_group!(Stem { conv1, norm1, conv2, norm2 });

/// Stride-2 convolution with bias followed by a linear projection to `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embed {
    pub conv: Tensor,
    pub conv_bias: Tensor,
    pub proj: Linear,
}
param_group!(Embed { conv, conv_bias, proj });

/// Every learnable array of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub stem: Stem,
    pub temporal_embed: Embed,
    pub spatial_embed: Embed,
    pub temporal_pos: Tensor,
    pub spatial_pos: Tensor,
    pub temporal_blocks: Vec<Block>,
    pub spatial_blocks: Vec<Block>,
    pub fusion: Block,
    /// `None` when post-fusion stages share the pre-fusion weights.
    pub temporal_post: Option<Vec<Block>>,
    pub spatial_post: Option<Vec<Block>>,
    pub head: Mlp,
}
param_group!(Params {
    stem,
    temporal_embed,
    spatial_embed,
    temporal_pos,
    spatial_pos,
    temporal_blocks,
    spatial_blocks,
    fusion,
    temporal_post,
    spatial_post,
    head,
});

/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

struct Init {
    rng: SeededRng,
}

impl Init {
    fn weights(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng::truncated_normal(&mut self.rng, INIT_STD)).collect();
        Tensor::new(shape, data).expect("shape product matches")
    }

    fn linear(&mut self, inputs: usize, outputs: usize) -> Linear {
        Linear { weight: self.weights(&[inputs, outputs]), bias: Tensor::zeros(&[outputs]) }
    }

    fn block(&mut self, d: usize, hidden: usize) -> Block {
        Block {
            norm1: Norm::identity(d),
            attn: Attention {
                query: self.linear(d, d),
                key: self.linear(d, d),
                value: self.linear(d, d),
                out: self.linear(d, d),
            },
            norm2: Norm::identity(d),
            mlp: Mlp { fc1: self.linear(d, hidden), fc2: self.linear(hidden, d) },
        }
    }

    fn blocks(&mut self, n: usize, d: usize, hidden: usize) -> Vec<Block> {
        (0..n).map(|_| self.block(d, hidden)).collect()
    }
}

/// Truncated-normal (std 0.02) weights, zero biases and position tables,
/// identity norms. Deterministic per seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Params> {
    let dims = cfg.dims()?;
    let mut init = Init { rng: rng::seeded(seed) };
    let [c1, c2] = cfg.stem_channels;
    let (d, hidden) = (cfg.dim, cfg.dim * cfg.mlp_ratio);
    let stem = Stem {
        conv1: init.weights(&[c1, 2, KERNEL, KERNEL]),
        norm1: Norm::identity(c1),
        conv2: init.weights(&[c2, c1, KERNEL, KERNEL]),
        norm2: Norm::identity(c2),
    };
    let temporal_embed = Embed {
        conv: init.weights(&[cfg.temporal_channels, c2, KERNEL, KERNEL]),
        conv_bias: Tensor::zeros(&[cfg.temporal_channels]),
        proj: init.linear(dims.temporal_features, d),
    };
    let spatial_embed = Embed {
        conv: init.weights(&[cfg.spatial_channels, c2, KERNEL, KERNEL]),
        conv_bias: Tensor::zeros(&[cfg.spatial_channels]),
        proj: init.linear(dims.patch_features, d),
    };
    let temporal_blocks = init.blocks(cfg.depth, d, hidden);
    let spatial_blocks = init.blocks(cfg.depth, d, hidden);
    let fusion = init.block(d, hidden);
    let (temporal_post, spatial_post) = if cfg.share_post_fusion {
        (None, None)
    } else {
        (Some(init.blocks(cfg.depth, d, hidden)), Some(init.blocks(cfg.depth, d, hidden)))
    };
    let head = Mlp { fc1: init.linear((cfg.frames + dims.tokens) * d, d), fc2: init.linear(d, cfg.num_classes) };
    Ok(Params {
        stem,
        temporal_embed,
        spatial_embed,
        temporal_pos: Tensor::zeros(&[cfg.frames, d]),
        spatial_pos: Tensor::zeros(&[dims.tokens, d]),
        temporal_blocks,
        spatial_blocks,
        fusion,
        temporal_post,
        spatial_post,
        head,
    })
}

impl Params {
    /// Checks that every array has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = init_params(cfg, 0)?;
        let ours = self.named_tensors();
        let theirs = reference.named_tensors();
        if ours.len() != theirs.len() {
            return Err(Error::Config(format!(
                "parameter set has {} arrays, configuration implies {}",
                ours.len(),
                theirs.len()
            )));
        }
        for ((name, a), (rname, b)) in ours.iter().zip(&theirs) {
            if name != rname || a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match {rname} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}
