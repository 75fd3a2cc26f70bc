//! Core building blocks for probing how language models resolve quantifier
//! scope ambiguity.
//!
//! The crate is split along the evaluation flow:
//!
//! - [`stimuli`]: truth-value-judgment items and human rating datasets.
//! - [`scorer`]: conditional log-probability of a target sentence given a
//!   story context, for causal, masked, prompted and reference backends.
//! - [`metrics`]: surprisal, preference labels, response distributions and
//!   Human Similarity (1 - Jensen-Shannon divergence).
//! - [`stats`]: sum-coded regressions with item-clustered bootstrap
//!   inference, ANOVA and Tukey HSD.

pub mod metrics;
pub mod scorer;
pub mod stats;
pub mod stimuli;

mod types;

pub use types::{Condition, Language, Structure};
