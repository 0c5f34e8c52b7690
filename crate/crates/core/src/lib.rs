//! Learning to invert Patterson maps of small random-atom structures.
//!
//! The pipeline: [`datagen`] builds (Patterson map, density) pairs, [`model`]
//! trains a 3D convolutional network on them, and at inference time
//! [`peaks`], [`separate`] and [`eval`] turn a predicted density back into
//! atom coordinates and score them against the truth.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod peaks;
pub mod seed;
pub mod separate;

pub use error::{Error, ErrorKind, Result};
