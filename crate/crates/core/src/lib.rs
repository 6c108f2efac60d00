//! Positional-encoding kernel laboratory.
//!
//! * [`kernels`]: closed-form additive relative position biases (T5 buckets,
//!   Alibi, Kerple, Sandwich) and rotary embeddings.
//! * [`fire`]: functional interpolation for relative positional encoding,
//!   with analytic gradients for every trainable value.
//! * [`representation`]: exact FIRE constructions that reproduce each
//!   additive baseline on a bounded grid, plus a brute-force verifier.
//! * [`microlm`]: a small causal transformer with manual backpropagation,
//!   a copy task and a length-sweep evaluator.
//! * [`bench`]: timing harness for bias construction and attention forward.

pub mod bench;
pub mod error;
pub mod fire;
pub mod kernels;
pub mod microlm;
pub mod representation;

pub use error::{Error, Result};
