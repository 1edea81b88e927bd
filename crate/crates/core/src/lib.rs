//! Dataset distillation (distribution matching, single-step gradient
//! matching) and feature-guided evaluation of distilled sets on other
//! architectures.
//!
//! The evaluation model is split into a front and a rear section. The front
//! is pulled toward features that an extractor trained on the real data
//! produces for each synthetic image; the rear learns to classify those
//! cached features; the whole model also learns the synthetic labels.

pub mod data;
pub mod distill;
pub mod elf;
pub mod error;
pub mod experiment;
pub mod models;
pub mod provenance;
pub mod train;

pub use error::{Error, Result};
