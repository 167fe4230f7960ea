//! Three-phase transfer experiments (language-model pretraining, an
//! intermediate labeled task, then target fine-tuning) over a small
//! Transformer sentence encoder.

pub mod autodiff;
pub mod datakit;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod selfcheck;
pub mod store;

pub use error::{Error, Result};
