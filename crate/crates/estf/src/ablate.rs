//! Sweeps over one architecture axis: frame count, transformer depth, patch
//! grid or the stage toggles.

use std::collections::HashMap;
use std::fmt::Write;
use std::time::Instant;

use estf_core::model::{Components, ModelConfig, Patch};
use estf_core::Tensor;

use crate::config::RunConfig;
use crate::dataset::{load_split, Manifest, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_samples;
use crate::train::train_samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Frames,
    Depth,
    Patches,
    Components,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Frames => "frames",
            Axis::Depth => "depth",
            Axis::Patches => "patches",
            Axis::Components => "components",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Axis::Frames, Axis::Depth, Axis::Patches, Axis::Components].into_iter().find(|a| a.name() == s)
    }
}

pub const FRAMES: [usize; 6] = [4, 6, 8, 10, 12, 16];
pub const DEPTHS: [usize; 4] = [1, 2, 3, 4];
pub const PATCH_GRIDS: [usize; 3] = [8, 6, 4];

/// The component rows: no stages, each branch alone, both, both plus fusion.
pub const COMPONENT_ROWS: [(&str, Components); 5] = [
    ("baseline", Components { temporal: false, spatial: false, fusion: false }),
    ("+TF", Components { temporal: true, spatial: false, fusion: false }),
    ("+SF", Components { temporal: false, spatial: true, fusion: false }),
    ("+TF+SF", Components { temporal: true, spatial: true, fusion: false }),
    ("+TF+SF+Fusion", Components { temporal: true, spatial: true, fusion: true }),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub model: ModelConfig,
}

/// Closest input side to `side` for which `grid` divides the embedding
/// plane, preferring the smaller side on ties. Both sides follow the same
/// arithmetic, so a square probe checks one side.
fn fit_side(base: &ModelConfig, side: usize, grid: usize) -> Option<usize> {
    let ok = |s: usize| ModelConfig { patch: Patch::Grid(grid), height: s, width: s, ..base.clone() }.dims().is_ok();
    (0..=side).flat_map(|d| [side.checked_sub(d), Some(side + d)]).flatten().find(|&s| s > 0 && ok(s))
}

pub fn sweep(axis: Axis, base: &ModelConfig) -> Result<Vec<SweepPoint>> {
    let point = |label: String, model: ModelConfig| SweepPoint { label, model };
    let points = match axis {
        Axis::Frames => {
            FRAMES.iter().map(|&t| point(t.to_string(), ModelConfig { frames: t, ..base.clone() })).collect()
        }
        Axis::Depth => DEPTHS.iter().map(|&d| point(d.to_string(), ModelConfig { depth: d, ..base.clone() })).collect(),
        Axis::Patches => PATCH_GRIDS
            .iter()
            .map(|&g| {
                // the input plane is cropped or padded until the grid divides it
                let h = fit_side(base, base.height, g);
                let w = fit_side(base, base.width, g);
                match (h, w) {
                    (Some(height), Some(width)) => Ok(point(
                        format!("{g}x{g}"),
                        ModelConfig { patch: Patch::Grid(g), height, width, ..base.clone() },
                    )),
                    _ => Err(Error::Config(format!(
                        "no input size near {}x{} fits a {g}x{g} grid",
                        base.height, base.width
                    ))),
                }
            })
            .collect::<Result<_>>()?,
        Axis::Components => COMPONENT_ROWS
            .iter()
            .map(|(name, c)| point(name.to_string(), ModelConfig { components: *c, ..base.clone() }))
            .collect(),
    };
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub axis: Axis,
    pub point: String,
    pub seed: u64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub test_top1: Option<f64>,
    pub seconds: f64,
}

pub const TABLE_HEADER: &str = "axis,point,seed,train_top1,val_top1,test_top1,seconds";

pub fn table_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let test = r.test_top1.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{},{:.3}",
            r.axis.name(),
            r.point,
            r.seed,
            r.train_top1,
            r.val_top1,
            test,
            r.seconds
        );
    }
    s
}

type Loaded = (Vec<(Tensor, usize)>, Vec<(Tensor, usize)>, Vec<(Tensor, usize)>);

/// Trains and scores every sweep point once per seed. Each point's final
/// parameters are scored, and `progress` sees every row as it completes.
pub fn run(
    axis: Axis,
    base: &RunConfig,
    manifest: &Manifest,
    seeds: &[u64],
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let points = sweep(axis, &base.model)?;
    let names = manifest.class_names(base.model.num_classes);
    let mut cache: HashMap<(usize, usize, usize), Loaded> = HashMap::new();
    let mut rows = Vec::new();
    for p in &points {
        let key = (p.model.frames, p.model.height, p.model.width);
        if !cache.contains_key(&key) {
            let load = |s| load_split(manifest, s, &p.model, base.normalization);
            cache.insert(key, (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?));
        }
        let (train, val, test) = &cache[&key];
        if val.is_empty() {
            return Err(Error::Data("the val split is empty".into()));
        }
        for &seed in seeds {
            let start = Instant::now();
            let mut run = RunConfig { model: p.model.clone(), ..base.clone() };
            run.train.seed = seed;
            let out = train_samples(&run, train, val, |_| {})?;
            let score = |s: &[(Tensor, usize)], name: &str| {
                evaluate_samples(&out.params, &run.model, s, name, names.clone()).map(|r| r.top1)
            };
            let row = AblationRow {
                axis,
                point: p.label.clone(),
                seed,
                train_top1: score(train, "train")?,
                val_top1: score(val, "val")?,
                test_top1: if test.is_empty() { None } else { Some(score(test, "test")?) },
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_points() {
        let base = ModelConfig::default();
        let frames: Vec<usize> = sweep(Axis::Frames, &base).unwrap().iter().map(|p| p.model.frames).collect();
        assert_eq!(frames, FRAMES);
        let depth: Vec<usize> = sweep(Axis::Depth, &base).unwrap().iter().map(|p| p.model.depth).collect();
        assert_eq!(depth, DEPTHS);
        assert_eq!(sweep(Axis::Components, &base).unwrap().len(), 5);
        let patches = sweep(Axis::Patches, &base).unwrap();
        assert_eq!(patches.len(), 3);
        for (p, g) in patches.iter().zip(PATCH_GRIDS) {
            assert_eq!(p.model.dims().unwrap().tokens, g * g);
        }
        // 64 already fits 8x8 and 4x4; 6x6 moves to the nearest fitting side
        assert_eq!((patches[0].model.height, patches[2].model.height), (64, 64));
        assert_eq!(patches[1].model.height, 48);
    }
}
