//! Multi-agent transformer encoder for terminal-airspace traffic.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! pipeline: trajectory reconstruction and geodesic error metrics, scene
//! assembly with agent/padding masks, a small differentiable substrate with
//! hand-written gradients, the agent-aware and multi-head encoders with the
//! fine-tuning decoder, the training workflows, and a seeded synthetic
//! traffic generator. File formats and the command line live in
//! `mabert-cli`.

#![cfg_attr(not(test), no_std)]
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;

pub mod error;
pub mod geo;
pub mod model;
pub mod nn;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Matrix;
