//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers to run a subset:
//! `cargo test -p estf --test acceptance -- 1 6`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use estf::ablate::{self, Axis};
use estf::checkpoint;
use estf::config::RunConfig;
use estf::core::events::{stack_to_frames, Event, EventStream, Polarity};
use estf::core::model::{
    embed_spatial, forward_cached, fusion_block, init_params, spatial_stage, stem_forward, temporal_stage, Block,
    ModelConfig, Params,
};
use estf::core::params::ParamGroup;
use estf::core::training::{batch_loss, lr_at, TrainConfig};
use estf::core::{ops, rng, Tensor};
use estf::dataset::{self, GenOptions, Manifest, Split};
use estf::eval;
use estf::eventfile::{parse_events, write_events, EventFormat};
use estf::gradsuite::{run_suite, SuiteOptions};
use estf::train;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform(&mut r, lo, hi)).collect()).unwrap()
}

/// Init weights plus uniform noise everywhere except the norms.
fn random_params(cfg: &ModelConfig, seed: u64) -> Params {
    let mut p = init_params(cfg, seed).unwrap();
    let mut r = rng::seeded(seed ^ 0xabc);
    let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        if !name.contains("norm") {
            t.data_mut().iter_mut().for_each(|v| *v += rng::uniform(&mut r, -0.3, 0.3));
        }
    }
    p
}

fn random_frames(cfg: &ModelConfig, seed: u64) -> Tensor {
    random_tensor(&[cfg.frames, 2, cfg.height, cfg.width], seed, 0.0, 2.0)
}

/// Row standardization written out longhand.
fn layer_norm_oracle(x: &Tensor, eps: f64) -> Tensor {
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

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let per: usize = x.shape()[1..].iter().product();
    let data = perm.iter().flat_map(|&i| x.data()[i * per..(i + 1) * per].iter().copied()).collect();
    Tensor::new(x.shape(), data).unwrap()
}

fn random_stream(seed: u64) -> EventStream {
    let mut r = rng::seeded(seed);
    let w = 1 + rng::uniform(&mut r, 0.0, 64.0) as u16;
    let h = 1 + rng::uniform(&mut r, 0.0, 64.0) as u16;
    let n = rng::uniform(&mut r, 0.0, 2000.0) as usize;
    let t0 = rng::uniform(&mut r, 0.0, 1e6) as u64;
    let span = rng::uniform(&mut r, 0.0, 5e6);
    let mut ts: Vec<u64> = (0..n).map(|_| t0 + rng::uniform(&mut r, 0.0, span) as u64).collect();
    ts.sort_unstable();
    let events = ts
        .into_iter()
        .map(|t| Event {
            t,
            x: (rng::uniform(&mut r, 0.0, w as f64) as u16).min(w - 1),
            y: (rng::uniform(&mut r, 0.0, h as f64) as u16).min(h - 1),
            p: if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { Polarity::On } else { Polarity::Off },
        })
        .collect();
    EventStream::new(w, h, events).unwrap()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let lines = run_suite(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> =
        lines.iter().filter(|l| !l.passed).map(|l| format!("{} ({:.2e})", l.name, l.max_rel_error)).collect();
    ensure(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:.1?}"))?;
    Ok(format!("{} checks, worst relative error {worst:.2e}, {elapsed:.1?}", lines.len()))
}

fn silence(b: &mut Block) {
    b.attn.out.weight.fill(0.0);
    b.attn.out.bias.fill(0.0);
    b.mlp.fc2.weight.fill(0.0);
    b.mlp.fc2.bias.fill(0.0);
}

fn wiring_oracles() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let cfg = ModelConfig { depth: 1 + seed as usize % 3, ..ModelConfig::toy() };
        let mut p = random_params(&cfg, seed);
        p.spatial_blocks.iter_mut().chain(p.temporal_blocks.iter_mut()).for_each(silence);
        let n = 1 + seed as usize % 6;
        let xs = random_tensor(&[n, cfg.dim], 100 + seed, -3.0, 3.0);
        let xt = random_tensor(&[cfg.frames, cfg.dim], 200 + seed, -3.0, 3.0);
        // each silenced block reduces to an LN of its input
        let mut es = xs.clone();
        let mut et = xt.clone();
        for _ in 0..cfg.depth {
            es = layer_norm_oracle(&es, cfg.norm_eps);
            et = layer_norm_oracle(&et, cfg.norm_eps);
        }
        worst = worst.max(spatial_stage(&xs, &p.spatial_blocks, &cfg).unwrap().max_abs_diff(&es));
        worst = worst.max(temporal_stage(&xt, &p.temporal_blocks, &cfg).unwrap().max_abs_diff(&et));
        for double in [true, false] {
            let cfg = ModelConfig { fusion_double_residual: double, ..cfg.clone() };
            silence(&mut p.fusion);
            let (zt, zs) = fusion_block(&xt, &xs, &p.fusion, &cfg).unwrap();
            let z = ops::concat(&[&xt, &xs], 0).unwrap();
            let mut expect = layer_norm_oracle(&z, cfg.norm_eps);
            if double {
                expect.add_assign(&z);
            }
            ensure(zt.shape() == [cfg.frames, cfg.dim] && zs.shape() == [n, cfg.dim], || "fusion split shapes".into())?;
            worst = worst.max(ops::concat(&[&zt, &zs], 0).unwrap().max_abs_diff(&expect));
        }
    }
    ensure(worst < 1e-10, || format!("max deviation {worst:.2e}"))?;
    for cfg in [ModelConfig::toy(), ModelConfig::default()] {
        let tokens = cfg.frames + cfg.dims().unwrap().tokens;
        let c = forward_cached(&random_frames(&cfg, 7), &random_params(&cfg, 7), &cfg).unwrap();
        let (zt, zs) = c.fused.as_ref().ok_or("no fusion output")?;
        ensure(zt.dims2().unwrap().0 + zs.dims2().unwrap().0 == tokens, || "fused token count".into())?;
        let fused_maps = c.attention_maps().filter(|a| a.shape() == [tokens, tokens]).count();
        ensure(fused_maps == cfg.heads, || format!("{fused_maps} attention maps over {tokens} tokens"))?;
    }
    Ok(format!("max deviation {worst:.2e}; fusion attends over T+N tokens"))
}

fn attention_invariants() -> Outcome {
    let cfg = ModelConfig::toy();
    let (mut row_err, mut mean_err, mut rows) = (0.0f64, 0.0f64, 0usize);
    for seed in 0..1000 {
        let p = random_params(&cfg, seed);
        let c = forward_cached(&random_frames(&cfg, seed + 5000), &p, &cfg).map_err(|e| e.to_string())?;
        for a in c.attention_maps() {
            for i in 0..a.dims2().unwrap().0 {
                row_err = row_err.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
                ensure(a.row(i).iter().all(|v| (0.0..=1.0).contains(v)), || {
                    format!("seed {seed}: weight outside [0, 1]")
                })?;
                rows += 1;
            }
        }
        for y in c.layer_norm_outputs() {
            let (n, d) = y.dims2().unwrap();
            for i in 0..n {
                mean_err = mean_err.max((y.row(i).iter().sum::<f64>() / d as f64).abs());
            }
        }
    }
    ensure(row_err < 1e-9, || format!("attention row sum off by {row_err:.2e}"))?;
    ensure(mean_err < 1e-9, || format!("LN row mean {mean_err:.2e}"))?;
    Ok(format!("{rows} attention rows, max |sum-1| {row_err:.1e}, max |LN mean| {mean_err:.1e}"))
}

fn permutation_properties() -> Outcome {
    let (mut equi, mut inv) = (0.0f64, 0.0f64);
    let mut r = rng::seeded(99);
    for seed in 0..50 {
        let cfg = ModelConfig { depth: 1 + seed as usize % 3, ..ModelConfig::toy() };
        let p = random_params(&cfg, seed);
        let n = 2 + seed as usize % 15;
        let x = random_tensor(&[n, cfg.dim], 300 + seed, -2.0, 2.0);
        let perm = rng::permutation(&mut r, n);
        let y = spatial_stage(&x, &p.spatial_blocks, &cfg).unwrap();
        let yp = spatial_stage(&permute_rows(&x, &perm), &p.spatial_blocks, &cfg).unwrap();
        equi = equi.max(yp.max_abs_diff(&permute_rows(&y, &perm)));

        let frames = random_frames(&cfg, 400 + seed);
        let fperm = rng::permutation(&mut r, cfg.frames);
        let s = embed_spatial(&stem_forward(&frames, &p, &cfg).unwrap(), &p, &cfg).unwrap();
        let sp = embed_spatial(&stem_forward(&permute_rows(&frames, &fperm), &p, &cfg).unwrap(), &p, &cfg).unwrap();
        inv = inv.max(s.max_abs_diff(&sp));
    }
    ensure(equi < 1e-9, || format!("spatial stage equivariance off by {equi:.2e}"))?;
    ensure(inv < 1e-9, || format!("spatial embedding frame-order change {inv:.2e}"))?;
    Ok(format!("equivariance error {equi:.1e}, frame-order change {inv:.1e}"))
}

fn conservation() -> Outcome {
    let mut checks = 0;
    for seed in 0..1000 {
        let s = random_stream(seed);
        let (w, h) = (s.width() as usize, s.height() as usize);
        let mut per_pixel = vec![0.0; 2 * h * w];
        for e in s.events() {
            per_pixel[(e.p.channel() * h + e.y as usize) * w + e.x as usize] += 1.0;
        }
        for t in [4, 6, 8, 10, 12, 16] {
            let f = stack_to_frames(&s, t).map_err(|e| e.to_string())?;
            ensure(f.frames.sum() == s.len() as f64, || format!("stream {seed}, T={t}: total changed"))?;
            let mut summed = vec![0.0; 2 * h * w];
            for chunk in f.frames.data().chunks_exact(2 * h * w) {
                summed.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
            }
            ensure(summed == per_pixel, || format!("stream {seed}, T={t}: per-pixel counts changed"))?;
            checks += 1;
        }
    }
    Ok(format!("{checks} stream/frame-count pairs exact"))
}

fn loss_sanity() -> Outcome {
    let mut parts = Vec::new();
    for (classes, base) in [(4, ModelConfig::toy()), (10, ModelConfig::default()), (300, ModelConfig::default())] {
        let cfg = ModelConfig { num_classes: classes, ..base };
        let p = init_params(&cfg, train::init_seed(0)).unwrap();
        let xs: Vec<Tensor> = (0..8).map(|i| random_frames(&cfg, 60 + i)).collect();
        let refs: Vec<&Tensor> = xs.iter().collect();
        let labels: Vec<usize> = (0..8).map(|i| (i * 37) % classes).collect();
        let loss = batch_loss(&p, &cfg, &refs, &labels).map_err(|e| e.to_string())?;
        let gap = (loss - (classes as f64).ln()).abs();
        ensure(gap < 0.1, || format!("{classes} classes: loss {loss:.4} vs ln {:.4}", (classes as f64).ln()))?;
        parts.push(format!("K={classes}: {loss:.4}"));
    }
    let tc = TrainConfig::default();
    let lrs = [0, 15, 30].map(|e| lr_at(e, &tc));
    for (got, want) in lrs.iter().zip([0.01, 0.001, 0.0001]) {
        ensure((got - want).abs() < 1e-15, || format!("lr schedule gave {lrs:?}"))?;
    }
    Ok(format!("{}; lr {:?}", parts.join(", "), lrs))
}

/// Decay settings of the default schedule, batch 16, momentum 0.9.
fn learning_run(epochs: usize, seed: u64) -> RunConfig {
    let mut run = RunConfig::default();
    run.train = TrainConfig { batch_size: 16, epochs, momentum: 0.9, seed, ..TrainConfig::default() };
    run
}

fn synthetic_dataset(dir: &Path) -> Result<Manifest, String> {
    dataset::generate(&GenOptions { classes: 10, per_class: 50, seed: 0, ..GenOptions::default() }, dir)
        .map_err(|e| e.to_string())
}

fn learning() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = synthetic_dataset(&dir.path().join("data"))?;
    let run = learning_run(60, 0);
    let (out, _) = train::train(&run, &m, &dir.path().join("run"), |_| {}).map_err(|e| e.to_string())?;
    let score = |s| eval::evaluate(&out.params, &run, &m, s).map(|r| r.top1).map_err(|e| e.to_string());
    let (tr, va) = (score(Split::Train)?, score(Split::Val)?);
    let elapsed = start.elapsed();
    let detail = format!("train {tr:.3}, val {va:.3} after {} epochs, {elapsed:.0?}", run.train.epochs);
    ensure(tr >= 0.95 && va >= 0.80, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(30 * 60), || detail.clone())?;
    Ok(detail)
}

const SWEEP_EPOCHS: usize = 10;
const BAND: f64 = 0.02;

fn ablation_direction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = synthetic_dataset(dir.path())?;
    let rows = ablate::run(Axis::Components, &learning_run(SWEEP_EPOCHS, 0), &m, &[0, 1, 2], |_| {})
        .map_err(|e| e.to_string())?;
    let mean = |name: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.point == name).map(|r| r.val_top1).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let [base, tf, sf, _, full] = ablate::COMPONENT_ROWS.map(|(n, _)| mean(n));
    let summary =
        ablate::COMPONENT_ROWS.iter().map(|(n, _)| format!("{n} {:.3}", mean(n))).collect::<Vec<_>>().join(", ");
    for (lo, hi, what) in [
        (base, tf, "baseline <= +TF"),
        (base, sf, "baseline <= +SF"),
        (tf, full, "+TF <= full"),
        (sf, full, "+SF <= full"),
    ] {
        ensure(hi - lo >= -BAND, || format!("{what} violated: {summary}"))?;
    }
    Ok(format!("mean val top-1 over 3 seeds: {summary}"))
}

fn serialization() -> Outcome {
    let mut n = 0;
    for seed in 0..200 {
        let s = random_stream(10_000 + seed);
        for fmt in [EventFormat::Bin, EventFormat::Csv] {
            let bytes = write_events(&s, fmt);
            let back = parse_events(&bytes, fmt).map_err(|e| e.to_string())?;
            ensure(back == s && write_events(&back, fmt) == bytes, || format!("stream {seed} {fmt:?} round trip"))?;
            n += 1;
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = GenOptions {
        classes: 4,
        per_class: 10,
        duration_us: 1_000_000,
        width: 16,
        height: 16,
        ..GenOptions::default()
    };
    let m = dataset::generate(&opts, dir.path()).map_err(|e| e.to_string())?;
    for s in &m.samples {
        let bytes = std::fs::read(m.root.join(&s.path)).map_err(|e| e.to_string())?;
        let back = parse_events(&bytes, EventFormat::Bin).map_err(|e| e.to_string())?;
        ensure(write_events(&back, EventFormat::Bin) == bytes, || format!("{} round trip", s.path.display()))?;
    }
    let mut run = learning_run(5, 0);
    run.model = ModelConfig { height: 16, width: 16, num_classes: 4, ..ModelConfig::toy() };
    run.train.batch_size = 4;
    let (out, art) = train::train(&run, &m, &dir.path().join("run"), |_| {}).map_err(|e| e.to_string())?;
    for path in [&art.best, &art.last] {
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        let c = checkpoint::decode(&bytes).map_err(|e| e.to_string())?;
        ensure(c.config == run && checkpoint::encode(&c.config, &c.params) == bytes, || {
            format!("{} round trip", path.display())
        })?;
    }
    ensure(checkpoint::load(&art.last).map_err(|e| e.to_string())?.params == out.params, || {
        "last checkpoint params".into()
    })?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let r = eval::evaluate(&out.params, &run, &m, split).map_err(|e| e.to_string())?;
        let ratio = r.confusion.trace() as f64 / r.confusion.total() as f64;
        ensure(r.top1 == ratio && r.confusion.total() as usize == r.samples, || {
            format!("{} report inconsistent", split.name())
        })?;
    }
    Ok(format!("{n} stream round trips, {} dataset files, 2 checkpoints, 3 reports", m.samples.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("wiring oracles", wiring_oracles),
        ("attention and norm invariants", attention_invariants),
        ("permutation properties", permutation_properties),
        ("count conservation", conservation),
        ("loss and schedule sanity", loss_sanity),
        ("learning capability", learning),
        ("component ablation direction", ablation_direction),
        ("serialization", serialization),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let num = i + 1;
        if !selected.is_empty() && !selected.contains(&num) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {num}. {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {num}. {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
