//! Collaborative-learning simulator and gradient-leakage inference attacks.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`]: dense / embedding-bag models with exact manual backpropagation.
//! * [`protocol`]: synchronized-SGD and federated-averaging simulators that
//!   record exactly what an adversarial participant observes.
//! * [`synth`]: seeded synthetic datasets with planted properties.
//! * [`attack`]: membership inference from embedding sparsity and
//!   passive/active property inference from observed updates.
//! * [`harness`]: declarative scenarios, sweeps and metrics.

pub mod attack;
pub mod batch;
pub mod error;
pub mod harness;
pub mod nn;
pub mod params;
pub mod protocol;
pub mod rng;
pub mod synth;

pub use batch::{Input, InputMode, LabeledBatch, Record};
pub use error::{Error, Result};
pub use params::{Layout, ParamVector, SegmentMeta};
