//! Similarity transforms, camera frames, and point-cloud containers.
//!
//! Everything downstream (scale recovery, registration, rendering) is built
//! on the types here. Points are metric only when their containing
//! [`SceneCloud`] says so; the transform algebra itself is unit-agnostic.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality defect allowed when accepting a rotation matrix.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("scale must be finite and positive, got {0}")]
    BadScale(f64),
    #[error("rotation is not special orthogonal (defect {defect:.3e})")]
    NotARotation { defect: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Similarity transform `p ↦ scale · R · p + t`.
///
/// `scale` is strictly positive and `rotation` is special orthogonal; both
/// are checked at construction so downstream code can compose freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Sim3Transform {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::BadScale(scale));
        }
        let defect = rotation_defect(&rotation);
        if defect > ROTATION_TOL {
            return Err(GeometryError::NotARotation { defect });
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { what: "translation", index: 0 });
        }
        Ok(Self { scale, rotation, translation })
    }

    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_scale(scale: f64) -> Result<Self, GeometryError> {
        Self::new(scale, Mat3::identity(), Vec3::zeros())
    }

    pub fn from_rotation(rotation: Mat3) -> Result<Self, GeometryError> {
        Self::new(1.0, rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { scale: 1.0, rotation: Mat3::identity(), translation }
    }

    /// Rotation by `yaw` radians about the world z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        Self { scale: 1.0, rotation: yaw_matrix(yaw), translation: Vec3::zeros() }
    }

    /// `self ∘ other`: applying the result equals applying `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let inv_rot = self.rotation.transpose();
        Self {
            scale: inv_scale,
            rotation: inv_rot,
            translation: -(inv_scale * (inv_rot * self.translation)),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_points(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// Yaw component (Z-Y-X convention): `atan2(r10, r00)`.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rotation_defect(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

/// Pinhole camera with a rigid camera-to-world pose.
///
/// Camera axes follow the right-down-forward convention: +x right, +y down,
/// +z is the viewing direction, so depth is the camera-space z coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_index: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Continuous pixel coordinates plus camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraFrame {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::Degenerate(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Degenerate("zero image dimensions".into()));
        }
        let defect = rotation_defect(&self.rotation);
        if defect > ROTATION_TOL {
            return Err(GeometryError::NotARotation { defect });
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Camera-space coordinates of a world point.
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Projects a world point; `None` when depth is non-positive.
    pub fn project(&self, p: &Vec3) -> Option<PixelDepth> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some(PixelDepth {
            u: self.fx * c.x / c.z + self.cx,
            v: self.fy * c.y / c.z + self.cy,
            depth: c.z,
        })
    }

    /// Unit vector of the camera's down axis (+y) in world coordinates.
    pub fn down_axis(&self) -> Vec3 {
        self.rotation * Vec3::y()
    }

    /// Pose mapped through a world transform; the translation passes through
    /// the full similarity while the rotation stays rigid, which preserves
    /// the pixel coordinates of every consistently transformed point.
    pub fn transformed(&self, world: &Sim3Transform) -> CameraFrame {
        CameraFrame {
            rotation: world.rotation * self.rotation,
            translation: world.apply(&self.translation),
            ..*self
        }
    }
}

/// Unit bookkeeping for point clouds as they move through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    /// Reconstruction output, arbitrary global scale.
    Dimensionless,
    /// Metric units, gravity not yet aligned.
    Metric,
    /// Metric, floor at z = 0, +z up.
    Canonical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub frame_tag: FrameTag,
}

impl SceneCloud {
    pub fn new(points: Vec<Vec3>, colors: Option<Vec<[u8; 3]>>, frame_tag: FrameTag) -> Self {
        Self { points, colors, frame_tag }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl AxisBox {
    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn from_points(points: &[Vec3]) -> Option<Self> {
        let first = points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }
}

/// Per-axis trimmed bounding box.
///
/// Each bound is the order statistic `floor(trim · (n − 1))` positions in
/// from the corresponding end of the sorted axis coordinates, so `trim = 0`
/// reproduces the exact box and larger trims never enlarge it.
pub fn robust_aabb(points: &[Vec3], trim: f64) -> Result<AxisBox, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::Degenerate("robust_aabb of empty point set".into()));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(GeometryError::Degenerate(format!("trim must lie in [0, 0.5), got {trim}")));
    }
    for (i, p) in points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { what: "points", index: i });
        }
    }
    let n = points.len();
    let k = (trim * (n - 1) as f64).floor() as usize;
    let mut min = Vec3::zeros();
    let mut max = Vec3::zeros();
    let mut axis: Vec<f64> = Vec::with_capacity(n);
    for a in 0..3 {
        axis.clear();
        axis.extend(points.iter().map(|p| p[a]));
        axis.sort_unstable_by(|x, y| x.total_cmp(y));
        min[a] = axis[k];
        max[a] = axis[n - 1 - k];
    }
    Ok(AxisBox { min, max })
}

/// Right-up-back object space to right-down-forward: `(x, y, z) ↦ (x, −y, −z)`.
pub fn rub_to_rdf(p: &Vec3) -> Vec3 {
    Vec3::new(p.x, -p.y, -p.z)
}

/// Rotation form of [`rub_to_rdf`], usable inside a [`Sim3Transform`].
pub fn rub_to_rdf_matrix() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
}

/// Wraps an angle to `[−π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Magnitude of the wrapped difference between two angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
