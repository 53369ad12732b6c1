//! Semi-supervised sorghum panicle detection at desk scale.
//!
//! The crate provides the full pipeline: box geometry, a synthetic dataset
//! generator with orthomosaic tiling, a minimal single-class anchor detector
//! with hand-written gradients, teacher-student co-training (soft-teacher and
//! efficient-teacher style), and a COCO-style mAP@[.5:.95] evaluator.

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pseudo;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{BBox, ScoredBox};
