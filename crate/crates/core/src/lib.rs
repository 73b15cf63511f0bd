//! Visibility-aware multi-view plane-sweep stereo.
//!
//! The pipeline warps engineered feature pyramids of each source view onto
//! fronto-parallel depth planes of a reference camera, scores them with
//! group-wise correlation, and turns each pair into a depth distribution.
//! Pair-wise entropies estimate occlusion and weight the fused volume.

pub mod cascade;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod pairwise;
pub mod pointcloud;
pub mod reconstruct;
pub mod synth;

pub use cascade::{infer_depth, CascadeConfig, StageConfig, StageResult, View};
pub use error::{Error, Result};
pub use fusion::FusionStrategy;
pub use geometry::{CameraModel, DepthHypotheses};
pub use grid::{Grid, ValidityMask};
pub use pairwise::{DepthEstimate, FuParams, SmoothingParams};
