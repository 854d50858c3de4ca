//! Event-stream spatio-temporal transformer: tensor kernels with explicit
//! backward passes, a finite-difference gradient oracle, event-to-frame
//! stacking, synthetic event generators, the dual-branch model, and the
//! training and evaluation math.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, dataset
//! handling and the command line live in the `estf` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod events;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod synth;
mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
