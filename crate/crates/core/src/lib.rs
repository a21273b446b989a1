//! Hybrid contrastive training for multi-scenario ad ranking.
//!
//! A shared-bottom ranking model (feature embeddings, a shared MLP and one
//! tower per scenario) is trained on a cross-entropy objective plus two
//! contrastive terms: a weighted InfoNCE over the shared representations
//! with label-aware cross-scenario samples, memory-bank candidates and
//! diffusion-noised negatives, and an InfoNCE over the scenario towers with
//! dropout positives and cross-scenario-encoded negatives.

pub mod backbone;
pub mod data;
pub mod error;
pub mod loss;
pub mod math;
pub mod rng;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
pub use math::{Graph, Matrix, Var};
pub use rng::RngStream;
