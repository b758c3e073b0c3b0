//! Variable-length sequence generation by interleaving flow-matching
//! denoising with stochastic frame insertion.
//!
//! A field model maps a partially denoised sequence and its per-frame times
//! to velocities and per-slot insertion rates. [`sampler::generate`] runs the
//! coupled process; [`trainer`] fits [`model::ReferenceNet`] to it.

mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod flops;
pub mod loss;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod seq;
pub mod toyset;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{ContextSpec, FieldModel, FieldOutput};
pub use sampler::{generate, SampleTrace, SamplerConfig};
pub use schedule::Scheduler;
pub use seq::{Frame, FrameSeq, FrameShape};
