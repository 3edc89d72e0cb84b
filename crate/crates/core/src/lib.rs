//! Hierarchical predictive-coding objectives for discrete token sequences.
//!
//! The crate is organised around five areas:
//!
//! * [`token_core`]: token sequences, masks, tokenization paths, volume
//!   quantization and corpus I/O.
//! * [`predictors`]: conditional-distribution models with analytic gradients,
//!   the latent-query resampler and finite-difference gradient checking.
//! * [`objectives`]: the random / next / next-all losses, the curriculum and
//!   alternating schedules, and the pretraining loop.
//! * [`theory_lab`]: Monte-Carlo and exact-enumeration experiments for the
//!   error-accumulation, AR convergence, LAD-Lasso, alternating-SGD and
//!   information-complementarity results.
//! * [`seg_metrics`]: variation of information and adjusted Rand error over
//!   3D label volumes.

pub mod error;
pub mod objectives;
pub mod predictors;
pub mod report;
pub mod rng;
pub mod seg_metrics;
pub mod theory_lab;
pub mod token_core;

pub use error::{Error, Result};
