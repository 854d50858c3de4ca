//! Synthetic datasets on disk: one directory per class, one `.evs` file per
//! sample and a `manifest.csv` with `path,label,class,split` rows.

use std::path::{Path, PathBuf};

use estf_core::events::{fit_frames, normalize_frames, stack_to_frames, Normalization};
use estf_core::model::ModelConfig;
use estf_core::rng;
use estf_core::synth::{synth_generate, GeneratorSpec, Motion, DEFAULT_DURATION_US};
use estf_core::Tensor;
use rayon::prelude::*;

use crate::error::{self, Error, Result};
use crate::eventfile::{read_event_file, write_event_file};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// 60/10/30 per class: `⌊0.6n⌋` train, `⌊0.1n⌋` val, the rest test.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 6 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub class: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Manifest {
    /// Accepts either the dataset directory or the manifest file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let bytes = error::read(&file)?;
        let mut reader = csv::Reader::from_reader(&bytes[..]);
        let headers = reader.headers().map_err(|e| Error::Format(e.to_string()).in_file(&file))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "class", "split"] {
            return Err(Error::Format(format!("manifest header {headers:?}")).in_file(&file));
        }
        let mut samples = Vec::new();
        for (index, rec) in reader.records().enumerate() {
            let bad = |reason: String| Error::Record { index, reason }.in_file(&file);
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let label = rec[1].parse().map_err(|_| bad(format!("label {:?}", &rec[1])))?;
            let split = Split::parse(&rec[3]).ok_or_else(|| bad(format!("split {:?}", &rec[3])))?;
            samples.push(Sample { path: PathBuf::from(&rec[0]), label, class: rec[2].to_string(), split });
        }
        Ok(Manifest { root, samples })
    }

    pub fn save(&self) -> Result<PathBuf> {
        let file = self.root.join(MANIFEST);
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["path", "label", "class", "split"]).map_err(csv_err)?;
        for s in &self.samples {
            let path = s.path.to_string_lossy().replace('\\', "/");
            w.write_record([path.as_str(), &s.label.to_string(), &s.class, s.split.name()]).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        error::write(&file, &bytes)?;
        Ok(file)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Class names indexed by label; unknown labels get `class-<i>`.
    pub fn class_names(&self, classes: usize) -> Vec<String> {
        let mut names: Vec<String> = (0..classes).map(|i| format!("class-{i}")).collect();
        for s in &self.samples {
            if s.label < classes {
                names[s.label] = s.class.clone();
            }
        }
        names
    }

    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub classes: usize,
    pub per_class: usize,
    pub duration_us: u64,
    /// Background events per second.
    pub noise_rate: f64,
    pub seed: u64,
    pub width: u16,
    pub height: u16,
    /// Each sample's speed multiplier is drawn from `[1 − j, 1 + j]`.
    pub speed_jitter: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 50,
            duration_us: DEFAULT_DURATION_US,
            noise_rate: 200.0,
            seed: 0,
            width: 64,
            height: 64,
            speed_jitter: 0.3,
        }
    }
}

/// Writes a labeled dataset under `out` and its manifest.
pub fn generate(opts: &GenOptions, out: &Path) -> Result<Manifest> {
    if opts.classes == 0 || opts.classes > Motion::ALL.len() {
        return Err(Error::Config(format!("classes must be in 1..={}", Motion::ALL.len())));
    }
    if opts.per_class == 0 {
        return Err(Error::Config("per-class count must be positive".into()));
    }
    if !(0.0..1.0).contains(&opts.speed_jitter) {
        return Err(Error::Config(format!("speed jitter {} outside [0, 1)", opts.speed_jitter)));
    }
    let mut plan = Vec::new();
    for (label, motion) in Motion::ALL.iter().take(opts.classes).enumerate() {
        let (train, val, _) = split_counts(opts.per_class);
        let mut r = rng::seeded(rng::mix(&[opts.seed, label as u64, 0x5a17]));
        let order = rng::permutation(&mut r, opts.per_class);
        let mut splits = vec![Split::Test; opts.per_class];
        for (rank, &i) in order.iter().enumerate() {
            splits[i] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
        for (i, split) in splits.into_iter().enumerate() {
            plan.push((label, *motion, i, split));
        }
    }
    let samples = plan
        .into_par_iter()
        .map(|(label, motion, i, split)| {
            let seed = rng::mix(&[opts.seed, label as u64, i as u64]);
            let mut r = rng::seeded(seed);
            let spec = GeneratorSpec {
                motion,
                speed: rng::uniform(&mut r, 1.0 - opts.speed_jitter, 1.0 + opts.speed_jitter),
                duration_us: opts.duration_us,
                noise_rate: opts.noise_rate,
                width: opts.width,
                height: opts.height,
            };
            let stream = synth_generate(&spec, seed)?;
            let rel = PathBuf::from(motion.name()).join(format!("{:04}.evs", i));
            write_event_file(&out.join(&rel), &stream)?;
            Ok(Sample { path: rel, label, class: motion.name().to_string(), split })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { root: out.to_path_buf(), samples };
    manifest.save()?;
    Ok(manifest)
}

/// Event file → `T` count frames → normalization → crop/pad to the model plane.
pub fn load_frames(path: &Path, cfg: &ModelConfig, norm: Normalization) -> Result<Tensor> {
    let stream = read_event_file(path)?;
    let build = || -> Result<Tensor> {
        let stack = stack_to_frames(&stream, cfg.frames)?;
        let stack = normalize_frames(&stack, norm);
        Ok(fit_frames(&stack, cfg.height, cfg.width)?.frames)
    };
    build().map_err(|e| e.in_file(path))
}

/// Loads every sample of one split as `(frames, label)`, in manifest order.
pub fn load_split(m: &Manifest, split: Split, cfg: &ModelConfig, norm: Normalization) -> Result<Vec<(Tensor, usize)>> {
    let items: Vec<&Sample> = m.split(split).collect();
    items
        .par_iter()
        .map(|s| {
            let path = m.root.join(&s.path);
            if s.label >= cfg.num_classes {
                return Err(Error::Data(format!("label {} but the model has {} classes", s.label, cfg.num_classes))
                    .in_file(&path));
            }
            Ok((load_frames(&path, cfg, norm)?, s.label))
        })
        .collect()
}
