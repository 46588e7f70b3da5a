//! Compound image degradation synthesis, Jaccard-weighted contrastive
//! embeddings, prompt parsing and prompt-conditioned restoration.
//!
//! The crate is organized bottom-up:
//! - [`imaging`]: raster containers, seeded randomness, kernels, warps, noise, resampling, I/O
//! - [`distortions`]: the parametric degradation library and its label vocabulary
//! - [`prompts`]: template grammar, prompt parser, partial/negative request generation
//! - [`dataset`]: procedural clean scenes, compound degradation, manifests
//! - [`embedding`]: encoder, contrastive and quality losses, heads, SCPM fusion, training
//! - [`restoration`]: restoration planning and classical inverse operators
//! - [`eval`]: metrics, faithfulness, significance testing, experiment harnesses

pub mod dataset;
pub mod distortions;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod prompts;
pub mod restoration;

pub use error::{Error, Result};

/// Seed used whenever a caller does not supply one.
pub const DEFAULT_SEED: u64 = 42;
