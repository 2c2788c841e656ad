//! 2D-to-3D human pose lifting.
//!
//! A pose sequence of 2D joint detections is lifted to a 3D pose of the
//! center frame by a graph convolutional network: an adaptive graph
//! convolution mixes joints through a static skeleton partition plus learned
//! and input-dependent adjacency terms, strided temporal convolutions shrink
//! the sequence to a single frame, and per-joint affine heads read the 3D
//! position of each joint off its own feature vector.
//!
//! The crate is self-contained: all forward and backward passes are written
//! out explicitly (no autodiff), checked against finite differences, and the
//! whole pipeline — synthetic data generation, training, evaluation and
//! persistence — runs at desk scale on one CPU core.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod network;
pub mod skeleton;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{AblationVariant, LiftingModel, ModelConfig};
pub use skeleton::{AdjacencyStack, SkeletonGraph};
