//! Visual-representation benchmarking for imitation-learned manipulation
//! policies.
//!
//! The crate bundles everything needed to compare global, dense, and
//! object-centric (slot based) visual encoders on a common footing:
//!
//! - [`slots`]: iterative slot attention with competitive normalization.
//! - [`encoders`]: a frozen patch-transformer backbone plus the unified
//!   `Representation` interface (global / dense / slots) and an adapter for
//!   externally computed feature files.
//! - [`ocr`]: object-centric encoder models — feature-reconstruction training
//!   for images and a temporally-consistent video variant — with mask export.
//! - [`policy`]: two imitation policies (decoder-only trunk with chunked
//!   deterministic head, and a CVAE encoder-decoder with long chunks).
//! - [`sprites`]: a deterministic 2D multi-object manipulation environment
//!   with scripted experts and parametric visual-shift generators.
//! - [`data`]: trajectory container format, demonstration collection, and
//!   mixture/slice samplers.
//! - [`train`]: AdamW optimization loops, linear warmup/decay schedule, and
//!   resumable checkpoints.
//! - [`eval`]: rollout evaluation, generalization suites, ARI segmentation
//!   scoring, and CSV/markdown/plot reports.
//! - [`experiment`]: config parsing and the end-to-end pipeline drivers used
//!   by the CLI.
//!
//! All numerics are generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); concrete aliases for the common instantiations live at
//! the crate root.

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod ocr;
pub mod policy;
pub mod scalar;
pub mod slots;
pub mod sprites;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for desk-scale training runs.
pub type TrainScalar = f32;
/// Scalar used by the numeric test suites (finite differences need f64).
pub type CheckScalar = f64;

pub type Tensor32 = tensor::Var<f32>;
pub type Tensor64 = tensor::Var<f64>;




