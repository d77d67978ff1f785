//! Object-to-scene registration.
//!
//! Stage order per object: coarse scale from extent ratio, axis-convention
//! conversion and vertical alignment, yaw-hypothesis selection by
//! silhouette overlap, then planar trimmed ICP against the extracted
//! target cloud.

pub mod coarse;
pub mod floor;
pub mod tricp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::TargetCloud;
use crate::geometry::{CameraFrame, Sim3Transform};
use crate::grounding::BinaryMask;
use crate::io::config::RegistrationConfig;
use crate::io::ObjectMesh;

pub use coarse::{
    coarse_scale, hypothesis_pose, object_to_upright, sample_mesh_surface,
    select_yaw_hypothesis, YawChoice, YAW_HYPOTHESES,
};
pub use floor::{canonical_transform, fit_floor_plane, world_canonicalize, FloorPlane};
pub use tricp::{planar_step, tricp, TricpParams, TricpResult};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("floor not found: best plane has {best_inliers} inliers, need {need}")]
    FloorNotFound { best_inliers: usize, need: usize },
    #[error("too few points for registration: source {source_len}, target {target_len}")]
    TooFewPoints { source_len: usize, target_len: usize },
    #[error("trim ratio {0} outside (0, 1]")]
    BadTrimRatio(f64),
    #[error("degenerate extent: {0}")]
    DegenerateExtent(String),
    #[error("all yaw hypotheses scored zero silhouette overlap")]
    CoarseAlignmentFailed,
}

/// Lifecycle of one object through registration and refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectStatus {
    Registered,
    /// Refinement classes, replacing `Registered` once collisions resolve.
    Embedded,
    Freestanding,
    Untouched,
    SkippedExtraction,
    CoarseFailed,
}

impl ObjectStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectStatus::Registered => "registered",
            ObjectStatus::Embedded => "embedded",
            ObjectStatus::Freestanding => "freestanding",
            ObjectStatus::Untouched => "untouched",
            ObjectStatus::SkippedExtraction => "skipped_extraction",
            ObjectStatus::CoarseFailed => "coarse_failed",
        }
    }

    pub fn is_placed(self) -> bool {
        !matches!(self, ObjectStatus::SkippedExtraction | ObjectStatus::CoarseFailed)
    }
}

impl std::str::FromStr for ObjectStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "registered" => ObjectStatus::Registered,
            "embedded" => ObjectStatus::Embedded,
            "freestanding" => ObjectStatus::Freestanding,
            "untouched" => ObjectStatus::Untouched,
            "skipped_extraction" => ObjectStatus::SkippedExtraction,
            "coarse_failed" => ObjectStatus::CoarseFailed,
            other => return Err(format!("unknown object status '{other}'")),
        })
    }
}

/// One object registered into the canonical scene frame.
#[derive(Debug, Clone)]
pub struct RegisteredObject {
    pub track_id: String,
    /// Object space to canonical scene space.
    pub pose: Sim3Transform,
    pub object_scale: f64,
    pub coarse_yaw: f64,
    pub yaw_scores: [f64; 4],
    /// Final trimmed RMSE; absent when the fine stage was disabled.
    pub rmse_m: Option<f64>,
    pub tricp_converged: Option<bool>,
    pub status: ObjectStatus,
}

/// Stable per-object seed: FNV-1a over the track id, folded into the run
/// seed, so object work is order- and thread-independent.
pub fn object_seed(base: u64, track_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in track_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ base.rotate_left(17)
}

/// Full per-object chain. The camera and mask are the object's canonical
/// view in the same (canonical) frame as the target cloud.
pub fn register_object(
    mesh: &ObjectMesh,
    target: &TargetCloud,
    cam: &CameraFrame,
    mask: &BinaryMask,
    config: &RegistrationConfig,
    seed: u64,
) -> Result<RegisteredObject, RegistrationError> {
    let scale = coarse_scale(&mesh.vertices, &target.points, 0.02)?;
    let base = Sim3Transform::new(scale, object_to_upright(), crate::geometry::Vec3::zeros())
        .unwrap();
    let samples = sample_mesh_surface(&mesh.vertices, &mesh.faces, config.mesh_samples, seed);
    if samples.is_empty() {
        return Err(RegistrationError::DegenerateExtent("zero mesh surface area".into()));
    }
    let mesh_centroid =
        base.apply_points(&samples).iter().sum::<crate::geometry::Vec3>() / samples.len() as f64;

    let choice = select_yaw_hypothesis(
        &mesh.vertices,
        &mesh.faces,
        scale,
        &mesh_centroid,
        target,
        cam,
        mask,
        config.yaw_tie_margin,
    )?;

    if config.disable_tricp {
        return Ok(RegisteredObject {
            track_id: mesh.track_id.clone(),
            pose: choice.pose,
            object_scale: scale,
            coarse_yaw: choice.yaw,
            yaw_scores: choice.scores,
            rmse_m: None,
            tricp_converged: None,
            status: ObjectStatus::Registered,
        });
    }

    let posed_samples = choice.pose.apply_points(&samples);
    let params = TricpParams {
        trim_ratio: config.trim_ratio,
        max_iterations: config.max_iterations,
        tolerance: config.tolerance,
        vertical_release: config.vertical_release,
    };
    let fine = tricp(&posed_samples, &target.points, &params, &Sim3Transform::identity())?;
    Ok(RegisteredObject {
        track_id: mesh.track_id.clone(),
        pose: fine.transform.compose(&choice.pose),
        object_scale: scale,
        coarse_yaw: choice.yaw,
        yaw_scores: choice.scores,
        rmse_m: Some(fine.rmse_m),
        tricp_converged: Some(fine.converged),
        status: ObjectStatus::Registered,
    })
}
