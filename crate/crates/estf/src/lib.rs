//! File formats, datasets, training, evaluation and ablation sweeps for the
//! event-stream transformer in [`estf_core`].

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod eval;
pub mod eventfile;
pub mod gradsuite;
pub mod train;

pub use error::{Error, Result};
pub use estf_core as core;
