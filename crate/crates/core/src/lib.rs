//! Supervised discrete hashing toolkit.
//!
//! The crate learns compact binary codes for labeled feature vectors and
//! searches them by Hamming distance. Two trainers are provided:
//!
//! * [`fsdh::train_fsdh`]: assigns one column of a Sylvester Hadamard matrix
//!   to each class and fits the projection with a single ridge solve. No
//!   iteration, no dependence on initialization.
//! * [`sdh::train_sdh`]: the alternating F/W/B-step optimizer, with a
//!   pluggable solver for the per-sample binary quadratic program
//!   (see [`biqp`]).
//!
//! Pipeline:
//!
//! ```text
//! RawDataset --normalize--> RawDataset --KernelMap::transform--> X (M x N)
//!     X, labels --train_fsdh--> P, ClassCodes --> HashModel
//!     HashModel::encode(raw) --> PackedCodes --> CodeIndex --> eval metrics
//! ```

pub mod biqp;
pub mod codes;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsdh;
pub mod index;
pub mod kernelmap;
pub mod linalg;
pub mod sdh;

pub use codes::{ClassCodes, SignMatrix};
pub use dataset::{LabelArray, NormMode, RawDataset};
pub use error::{Error, Result};
pub use fsdh::{HashModel, Method};
pub use index::{CodeIndex, PackedCodes};
pub use kernelmap::KernelMap;
