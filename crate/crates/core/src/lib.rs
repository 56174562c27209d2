//! Ensemble fusion and evaluation for multi-model 3D segmentation.
//!
//! The crate fuses per-model channel score volumes (or argmax masks) with
//! four strategies: summed raw scores, summed softmax probabilities,
//! per-voxel majority vote, and STAPLE consensus. Fused masks are scored
//! against a reference with bidirectional mean distance-to-agreement,
//! 95th-percentile Hausdorff distance and signed volume difference, and
//! ensemble strategies are ranked against a single best model with paired
//! Wilcoxon signed-rank tests.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the precisions used by the file formats and the CLI.

pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod real;
pub mod staple;
pub mod stats;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use fusion::FusionMethod;
pub use metrics::{MetricReport, OrganMetrics, SurfaceSet};
pub use real::Real;
pub use staple::{StapleParams, StapleResult};
pub use volume::{BoundingBox, GridGeometry, LabelVolume, ScoreVolume};

/// Score volumes as stored on disk (`MET_FLOAT`).
pub type ScoreVolumeF32 = ScoreVolume<f32>;
/// Double-precision score volumes, e.g. softmax outputs kept in memory.
pub type ScoreVolumeF64 = ScoreVolume<f64>;
/// STAPLE run in double precision; what the CLI uses.
pub type StapleResultF64 = StapleResult<f64>;
/// Single-precision STAPLE, for memory-bound ROIs.
pub type StapleResultF32 = StapleResult<f32>;
/// Distance field in millimetres.
pub type DistanceFieldF64 = Vec<f64>;
