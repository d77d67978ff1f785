//! Deterministic fusion of dimensionless multi-view reconstructions with
//! per-object meshes into a metric, gravity-aligned, collision-free scene.

pub mod consistency;
pub mod eval;
pub mod extraction;
pub mod geometry;
pub mod grounding;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod registration;
pub mod scale;
pub mod spatial;
pub mod synth;
