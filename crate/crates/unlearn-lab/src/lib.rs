//! Desk-scale laboratory for studying optimizer decoupling in machine
//! unlearning.
//!
//! The crate provides:
//!
//! - a small, fully deterministic f64 MLP with manual backprop ([`nn`]),
//! - SGD / Adam / Lion optimizers plus a dual-optimizer wrapper whose
//!   momentum buffers can be aliased or decoupled per phase ([`optim`]),
//! - an alternating forget/retain unlearning pipeline with several forget
//!   objectives ([`unlearn`]),
//! - forget/retain/test accuracy and an entropy-threshold membership
//!   inference attack, with cross-trial aggregation ([`metrics`]),
//! - a variance laboratory that simulates shared vs. decoupled momentum on
//!   quadratic objectives and evaluates the matching worst-case variance
//!   recursions ([`variance_lab`]),
//! - synthetic Gaussian-blob datasets and IDX image/label file I/O
//!   ([`data`]),
//! - a command-line front end ([`cli`]).
//!
//! All randomness flows through one pinned SplitMix64 generator ([`rng`]),
//! so identical seeds reproduce identical artifacts across platforms.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod unlearn;
pub mod variance_lab;

pub use error::{Error, Result};
