//! Run configuration file: flat `key = value` lines (TOML syntax), versioned.
//!
//! Every key is optional except `version`; missing keys take their
//! defaults and unknown keys are rejected.
//!
//! | key | meaning |
//! |---|---|
//! | `version` | always `1` |
//! | `frames` `height` `width` | input frame stack `T×2×H×W` |
//! | `stem_channels` `stem_strides` | two-element arrays |
//! | `temporal_channels` `spatial_channels` | embedding conv widths |
//! | `dim` `heads` `mlp_ratio` `depth` | transformer sizes |
//! | `patch_grid` or `patch_size` | spatial tokenization |
//! | `num_classes` `activation` (`relu`/`gelu`) `norm_eps` | |
//! | `fusion_double_residual` `share_post_fusion` | block wiring |
//! | `temporal` `spatial` `fusion` | stage toggles |
//! | `batch_size` `lr0` `decay_every` `decay_factor` `momentum` `epochs` `seed` | training |
//! | `normalization` (`none`/`per-frame-max`/`log1p`) | frame scaling |

use std::fmt::Write;
use std::path::Path;

use estf_core::events::Normalization;
use estf_core::model::{Components, ModelConfig, Patch};
use estf_core::ops::Activation;
use estf_core::training::TrainConfig;
use toml::{Table, Value};

use crate::error::{self, Error, Result};

pub const VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub normalization: Normalization,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), train: TrainConfig::default(), normalization: Normalization::default() }
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Gelu => "gelu",
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("version", VERSION.to_string());
        line("frames", m.frames.to_string());
        line("height", m.height.to_string());
        line("width", m.width.to_string());
        line("stem_channels", format!("[{}, {}]", m.stem_channels[0], m.stem_channels[1]));
        line("stem_strides", format!("[{}, {}]", m.stem_strides[0], m.stem_strides[1]));
        line("temporal_channels", m.temporal_channels.to_string());
        line("spatial_channels", m.spatial_channels.to_string());
        line("dim", m.dim.to_string());
        line("heads", m.heads.to_string());
        line("mlp_ratio", m.mlp_ratio.to_string());
        line("depth", m.depth.to_string());
        match m.patch {
            Patch::Grid(n) => line("patch_grid", n.to_string()),
            Patch::Size(n) => line("patch_size", n.to_string()),
        }
        line("num_classes", m.num_classes.to_string());
        line("activation", format!("{:?}", activation_name(m.activation)));
        line("norm_eps", format!("{:?}", m.norm_eps));
        line("fusion_double_residual", m.fusion_double_residual.to_string());
        line("share_post_fusion", m.share_post_fusion.to_string());
        line("temporal", m.components.temporal.to_string());
        line("spatial", m.components.spatial.to_string());
        line("fusion", m.components.fusion.to_string());
        line("batch_size", t.batch_size.to_string());
        line("lr0", format!("{:?}", t.lr0));
        line("decay_every", t.decay_every.to_string());
        line("decay_factor", format!("{:?}", t.decay_factor));
        line("momentum", format!("{:?}", t.momentum));
        line("epochs", t.epochs.to_string());
        line("seed", t.seed.to_string());
        line("normalization", format!("{:?}", self.normalization.name()));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut r = Reader { table };
        match r.take("version") {
            Some(Value::Integer(VERSION)) => {}
            Some(v) => return Err(Error::Config(format!("unsupported version {v}"))),
            None => return Err(Error::Config("missing version".into())),
        }
        let mut c = RunConfig::default();
        let m = &mut c.model;
        r.usize("frames", &mut m.frames)?;
        r.usize("height", &mut m.height)?;
        r.usize("width", &mut m.width)?;
        r.pair("stem_channels", &mut m.stem_channels)?;
        r.pair("stem_strides", &mut m.stem_strides)?;
        r.usize("temporal_channels", &mut m.temporal_channels)?;
        r.usize("spatial_channels", &mut m.spatial_channels)?;
        r.usize("dim", &mut m.dim)?;
        r.usize("heads", &mut m.heads)?;
        r.usize("mlp_ratio", &mut m.mlp_ratio)?;
        r.usize("depth", &mut m.depth)?;
        let (mut grid, mut size) = (None, None);
        r.opt_usize("patch_grid", &mut grid)?;
        r.opt_usize("patch_size", &mut size)?;
        m.patch = match (grid, size) {
            (Some(_), Some(_)) => return Err(Error::Config("give patch_grid or patch_size, not both".into())),
            (Some(n), None) => Patch::Grid(n),
            (None, Some(n)) => Patch::Size(n),
            (None, None) => m.patch,
        };
        r.usize("num_classes", &mut m.num_classes)?;
        if let Some(a) = r.string("activation")? {
            m.activation = match a.as_str() {
                "relu" => Activation::Relu,
                "gelu" => Activation::Gelu,
                other => return Err(Error::Config(format!("unknown activation {other:?}"))),
            };
        }
        r.f64("norm_eps", &mut m.norm_eps)?;
        r.bool("fusion_double_residual", &mut m.fusion_double_residual)?;
        r.bool("share_post_fusion", &mut m.share_post_fusion)?;
        let Components { temporal, spatial, fusion } = &mut m.components;
        r.bool("temporal", temporal)?;
        r.bool("spatial", spatial)?;
        r.bool("fusion", fusion)?;
        let t = &mut c.train;
        r.usize("batch_size", &mut t.batch_size)?;
        r.f64("lr0", &mut t.lr0)?;
        r.usize("decay_every", &mut t.decay_every)?;
        r.f64("decay_factor", &mut t.decay_factor)?;
        r.f64("momentum", &mut t.momentum)?;
        r.usize("epochs", &mut t.epochs)?;
        let mut seed = t.seed as usize;
        r.usize("seed", &mut seed)?;
        t.seed = seed as u64;
        if let Some(n) = r.string("normalization")? {
            c.normalization =
                Normalization::parse(&n).ok_or_else(|| Error::Config(format!("unknown normalization {n:?}")))?;
        }
        if let Some(k) = r.table.keys().next() {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = error::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config("not UTF-8".into()).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, self.to_text().as_bytes())
    }
}

struct Reader {
    table: Table,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn bad(key: &str, v: &Value, want: &str) -> Error {
        Error::Config(format!("{key} = {v} is not {want}"))
    }

    fn usize(&mut self, key: &str, out: &mut usize) -> Result<()> {
        let mut v = None;
        self.opt_usize(key, &mut v)?;
        if let Some(v) = v {
            *out = v;
        }
        Ok(())
    }

    fn opt_usize(&mut self, key: &str, out: &mut Option<usize>) -> Result<()> {
        match self.take(key) {
            None => Ok(()),
            Some(Value::Integer(i)) if i >= 0 => {
                *out = Some(i as usize);
                Ok(())
            }
            Some(v) => Err(Self::bad(key, &v, "a nonnegative integer")),
        }
    }

    fn pair(&mut self, key: &str, out: &mut [usize; 2]) -> Result<()> {
        match self.take(key) {
            None => Ok(()),
            Some(Value::Array(a)) if a.len() == 2 => {
                for (o, v) in out.iter_mut().zip(&a) {
                    match v {
                        Value::Integer(i) if *i >= 0 => *o = *i as usize,
                        _ => return Err(Self::bad(key, v, "a nonnegative integer")),
                    }
                }
                Ok(())
            }
            Some(v) => Err(Self::bad(key, &v, "a two-element array")),
        }
    }

    fn f64(&mut self, key: &str, out: &mut f64) -> Result<()> {
        match self.take(key) {
            None => Ok(()),
            Some(Value::Float(f)) => {
                *out = f;
                Ok(())
            }
            Some(Value::Integer(i)) => {
                *out = i as f64;
                Ok(())
            }
            Some(v) => Err(Self::bad(key, &v, "a number")),
        }
    }

    fn bool(&mut self, key: &str, out: &mut bool) -> Result<()> {
        match self.take(key) {
            None => Ok(()),
            Some(Value::Boolean(b)) => {
                *out = b;
                Ok(())
            }
            Some(v) => Err(Self::bad(key, &v, "true or false")),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(Self::bad(key, &v, "a string")),
        }
    }
}
