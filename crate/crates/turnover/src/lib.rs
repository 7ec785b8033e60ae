//! Estimating per-example memorization of training data with turn-over dropout.
//!
//! The toolkit trains small networks in which every training example owns a fixed,
//! deterministic dropout mask. The mask splits the model into two sub-networks:
//! the unmuted one (updated whenever the example is seen) and the muted one (never
//! updated on it). The loss gap between the two sub-networks on the example is its
//! memorization score, a cheap stand-in for leave-one-out retraining, which is
//! also implemented here as a brute-force oracle for validation at small scale.
//!
//! On top of the estimator sit the optimization-dynamics experiments: easy/difficult
//! subset training curves, per-example gradient coherence and contribution, control
//! removal, cross-subset transfer, and corruption sweeps, all config-driven and
//! byte-reproducible.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradstats;
pub mod influence;
pub mod mask;
pub mod model_io;
pub mod nn;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
