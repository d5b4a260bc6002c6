//! Augmentation-interpolative autoencoders for few-shot image generation.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evalsuite;
pub mod grid;
pub mod inversion;
pub mod models;
pub mod rundir;
pub mod sampler;
pub mod training;

pub use error::{Error, Result};
