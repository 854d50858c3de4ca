use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use estf::ablate::{self, Axis};
use estf::checkpoint;
use estf::config::RunConfig;
use estf::dataset::{self, GenOptions, Manifest, Split};
use estf::eval;
use estf::gradsuite::{run_suite, SuiteOptions};
use estf::train;

#[derive(Parser)]
#[command(name = "estf", version, about = "Event-stream spatio-temporal transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic event dataset with a 60/10/30 split.
    Gen {
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..=12))]
        classes: u64,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        per_class: u64,
        /// Clip length in seconds.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        /// Background noise events per second.
        #[arg(long, default_value_t = 200.0)]
        noise_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: u16,
        #[arg(long, default_value_t = 64)]
        height: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch; writes the effective config, learning curve and checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split; writes report.txt and confusion.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the five most likely classes for one event file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `.evs` or `.csv` event file.
        #[arg(long)]
        events: PathBuf,
        /// Dataset whose manifest provides class names.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the toy model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Random cases per primitive.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Skip the end-to-end model check.
        #[arg(long)]
        no_model: bool,
        #[arg(long, hide = true)]
        inject_sign_flip: Option<String>,
    },
    /// Sweep one axis and write a results table.
    Ablate {
        #[arg(long, value_parser = ["frames", "depth", "patches", "components"])]
        axis: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runtime failure; printed with the command name, exit code 1.
struct Failure(String);

impl From<estf::Error> for Failure {
    fn from(e: estf::Error) -> Self {
        Failure(e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(command: Command) -> Result<bool, Failure> {
    match command {
        Command::Gen { classes, per_class, duration, noise_rate, seed, width, height, out } => {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(Failure(format!("duration {duration} must be positive")));
            }
            let opts = GenOptions {
                classes: classes as usize,
                per_class: per_class as usize,
                duration_us: (duration * 1e6).round() as u64,
                noise_rate,
                seed,
                width,
                height,
                ..GenOptions::default()
            };
            let m = dataset::generate(&opts, &out)?;
            let count = |s| m.split(s).count();
            println!(
                "{} samples: {} train, {} val, {} test",
                m.samples.len(),
                count(Split::Train),
                count(Split::Val),
                count(Split::Test)
            );
            wrote(&out.join(dataset::MANIFEST));
        }
        Command::Train { data, config, seed, out } => {
            let mut run = load_config(config.as_deref())?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            let manifest = Manifest::load(&data)?;
            let (output, art) = train::train(&run, &manifest, &out, |r| {
                let val = r.val_top1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                println!(
                    "epoch {:3}  lr {:.0e}  loss {:.4}  train {:.4}  val {val}  {:.1}s",
                    r.epoch, r.lr, r.train_loss, r.train_top1, r.wall_seconds
                );
            })?;
            if let Some(v) = output.best_val_top1 {
                println!("best val top1 {v:.4} at epoch {}", output.best_epoch);
            }
            for p in [&art.config, &art.curve, &art.best, &art.last] {
                wrote(p);
            }
        }
        Command::Eval { checkpoint, data, split, out } => {
            let ckpt = checkpoint::load(&checkpoint)?;
            let manifest = Manifest::load(&data)?;
            let split = Split::parse(&split).expect("validated by the parser");
            let report = eval::evaluate(&ckpt.params, &ckpt.config, &manifest, split)?;
            print!("{}", report.to_text());
            for p in report.write(&out)? {
                wrote(&p);
            }
        }
        Command::Predict { checkpoint, events, data } => {
            let ckpt = checkpoint::load(&checkpoint)?;
            let cfg = &ckpt.config.model;
            let names = match data {
                Some(d) => Manifest::load(&d)?.class_names(cfg.num_classes),
                None => (0..cfg.num_classes).map(|i| format!("class-{i}")).collect(),
            };
            let top = eval::predict_file(&ckpt.params, cfg, ckpt.config.normalization, &events, 5)?;
            for (rank, (label, p)) in top.iter().enumerate() {
                println!("{}  {:<24} {p:.6}", rank + 1, names[*label]);
            }
        }
        Command::Gradcheck { tol, step, seeds, no_model, inject_sign_flip } => {
            let opts = SuiteOptions { seeds, step, tol, inject_sign_flip, model: !no_model };
            let lines = run_suite(&opts)?;
            let mut ok = true;
            for l in &lines {
                ok &= l.passed;
                println!(
                    "{} {:<38} max rel error {:.3e} over {} coordinates (worst: {})",
                    if l.passed { "PASS" } else { "FAIL" },
                    l.name,
                    l.max_rel_error,
                    l.checked,
                    l.worst
                );
            }
            let failed: Vec<&str> = lines.iter().filter(|l| !l.passed).map(|l| l.name.as_str()).collect();
            if !ok {
                eprintln!("gradcheck: {} failed at tolerance {tol:e}: {}", failed.len(), failed.join(", "));
            }
            return Ok(ok);
        }
        Command::Ablate { axis, data, config, seeds, out } => {
            let axis = Axis::parse(&axis).expect("validated by the parser");
            let run = load_config(config.as_deref())?;
            let manifest = Manifest::load(&data)?;
            let rows = ablate::run(axis, &run, &manifest, &seeds, |r| {
                println!(
                    "{:<16} seed {:<4} train {:.4}  val {:.4}  {:.1}s",
                    r.point, r.seed, r.train_top1, r.val_top1, r.seconds
                );
            })?;
            let path = out.join(format!("ablation_{}.csv", axis.name()));
            std::fs::create_dir_all(&out).map_err(|e| Failure(format!("{}: {e}", out.display())))?;
            std::fs::write(&path, ablate::table_csv(&rows)).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            wrote(&path);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Gen { .. } => "gen",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Predict { .. } => "predict",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Ablate { .. } => "ablate",
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure(msg)) => {
            eprintln!("error: {name}: {msg}");
            ExitCode::from(1)
        }
    }
}
