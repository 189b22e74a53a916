//! Exact-solver training data, convolutional surrogates and inverse design
//! for spatial observable maps of interacting lattice models.

pub mod compare;
pub mod dataset;
pub mod ed;
pub mod error;
pub mod lattice;
pub mod hf;
pub mod nn;
pub mod par;
pub mod predict;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lattice::{LatticeGeometry, ModelParams, PotentialField, Statistics};
pub use tensor::Tensor;
