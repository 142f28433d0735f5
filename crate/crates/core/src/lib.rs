//! Sequence-to-point knowledge distillation for short-term GPU-node load
//! forecasting.
//!
//! An encoder-only attention teacher forecasts an `H`-step residual load
//! trajectory from an `L`-step history; a point-wise MLP student is distilled
//! from it for one-step rolling inference.

pub mod error;
pub mod eval;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod numerics;
pub mod student;
pub mod synth;
pub mod teacher;

pub use error::{Error, Result};
