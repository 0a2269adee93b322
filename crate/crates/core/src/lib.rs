//! Point cloud denoising with a tractable diffusion bridge between paired
//! noisy and clean point sets.
//!
//! The pipeline: [`synth`] fabricates paired data, [`assignment`] aligns each
//! clean cloud to its noisy partner once, [`train`] fits the [`denoiser`] on
//! closed-form [`bridge`] posteriors, [`infer`] runs few-step reverse sampling
//! over overlapping patches, and [`metrics`] scores the result.

pub mod assignment;
pub mod bridge;
pub mod cloud;
pub mod denoiser;
pub mod error;
pub mod infer;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod spatial;
pub mod synth;
pub mod train;

pub use cloud::{PointCloud, TriangleMesh, Vec3};
pub use error::{Error, Result};
pub use spatial::SpatialIndex;
