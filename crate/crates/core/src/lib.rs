//! Online GRPO post-training for a toy conditional diffusion model, driven by
//! a geometry-aware safety-steered reward.
//!
//! The crate is organized around the training loop's data flow:
//!
//! - [`diffnum`] — dense-vector numerics, a small MLP with reverse-mode
//!   gradients, an Adam updater, and a finite-difference gradient oracle
//! - [`embedspace`] — the shared unit-sphere embedding space: synthetic
//!   encoder, safety-direction construction, text safety detection, and the
//!   steering transform
//! - [`diffuser`] — DDIM sampling with tunable stochasticity, classifier-free
//!   guidance, and exact Gaussian transition log-probabilities
//! - [`reward`] — the steered cosine reward plus its ablation variants
//! - [`grpo`] — group-relative advantages, the clipped surrogate with KL
//!   penalty, inner-epoch updates, and the full training loop
//! - [`synthlab`] — synthetic task presets with a ground-truth unsafe-content
//!   oracle and safety/utility metrics

pub mod diffnum;
pub mod diffuser;
pub mod embedspace;
pub mod error;
pub mod grpo;
pub mod reward;
pub mod seeding;
pub mod synthlab;

pub use error::{Error, Result};
