//! Finite-difference checks of every primitive and of the whole toy model.

use estf_core::gradcheck::{check_model, check_primitive, Sampling, PRIMITIVES};
use estf_core::model::ModelConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    /// Random cases per primitive.
    pub seeds: u64,
    pub step: f64,
    pub tol: f64,
    /// Negate the analytic gradient of this primitive (harness self-test).
    pub inject_sign_flip: Option<String>,
    pub model: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seeds: 100, step: 1e-5, tol: 1e-4, inject_sign_flip: None, model: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteLine {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
    /// Where the largest error was seen.
    pub worst: String,
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteLine>> {
    if let Some(name) = &opts.inject_sign_flip {
        if !PRIMITIVES.contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown primitive {name:?}; known: {}", PRIMITIVES.join(", "))));
        }
    }
    let mut lines = Vec::new();
    for name in PRIMITIVES {
        let flip = opts.inject_sign_flip.as_deref() == Some(*name);
        let mut line =
            SuiteLine { name: name.to_string(), max_rel_error: 0.0, checked: 0, passed: true, worst: String::new() };
        for seed in 0..opts.seeds {
            let r = check_primitive(name, seed, opts.step, opts.tol, flip)?;
            line.checked += r.checked;
            if r.max_rel_error >= line.max_rel_error {
                line.max_rel_error = r.max_rel_error;
                line.worst = format!(
                    "seed {seed}, {}",
                    r.worst.as_ref().map(|(t, i)| format!("input {t}[{i}]")).unwrap_or_default()
                );
            }
            line.passed &= r.passed();
        }
        lines.push(line);
    }
    if opts.model {
        for (label, cfg) in [
            ("model (toy)", ModelConfig::toy()),
            (
                "model (toy, single fusion residual)",
                ModelConfig { fusion_double_residual: false, ..ModelConfig::toy() },
            ),
        ] {
            let r = check_model(&cfg, 7, opts.step, opts.tol, Sampling::All)?;
            lines.push(SuiteLine {
                name: label.to_string(),
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                passed: r.passed(),
                worst: r.worst.map(|(t, i)| format!("{t}[{i}]")).unwrap_or_default(),
            });
        }
    }
    Ok(lines)
}
