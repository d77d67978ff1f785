//! On-disk record schemas: camera trajectories, anchor specs, registration
//! rows, and stage artifacts.
//!
//! JSONL files hold one record per line in a stable order (frame index or
//! track id), which is what makes whole-pipeline reruns byte-comparable.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::geometry::{CameraFrame, Mat3, Sim3Transform, Vec3};

use super::{config::PipelineConfig, IoError};

/// One line of `cameras.jsonl`: intrinsics plus a row-major 3x4 `[R|t]`
/// camera-to-world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub frame_index: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose_c2w: [f64; 12],
}

impl CameraRecord {
    pub fn from_frame(cam: &CameraFrame) -> Self {
        let r = &cam.rotation;
        let t = &cam.translation;
        Self {
            frame_index: cam.frame_index,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            pose_c2w: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
                r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
                r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            ],
        }
    }

    pub fn to_frame(&self) -> Result<CameraFrame, IoError> {
        let p = &self.pose_c2w;
        let cam = CameraFrame {
            frame_index: self.frame_index,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: Mat3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]),
            translation: Vec3::new(p[3], p[7], p[11]),
        };
        cam.validate().map_err(|e| {
            IoError::Validation(format!("camera frame {}: {e}", self.frame_index))
        })?;
        Ok(cam)
    }
}

/// Physical-anchor description: one annotated frame with the anchor's image
/// bounding box and its real width and depth in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    pub frame_index: usize,
    /// `[u_min, v_min, u_max, v_max]` in pixels.
    pub bbox: [f64; 4],
    pub width_m: f64,
    pub depth_m: f64,
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<(), IoError> {
        if !(self.width_m > 0.0 && self.depth_m > 0.0) {
            return Err(IoError::Validation(format!(
                "anchor dimensions must be positive, got {} x {}",
                self.width_m, self.depth_m
            )));
        }
        if self.bbox[0] >= self.bbox[2] || self.bbox[1] >= self.bbox[3] {
            return Err(IoError::Validation(format!("anchor bbox is empty: {:?}", self.bbox)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let spec: Self = read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Sidecar for each object mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_frame: Option<usize>,
}

/// JSON form of a similarity transform (row-major rotation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sim3Record {
    pub scale: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl Sim3Record {
    pub fn from_sim3(t: &Sim3Transform) -> Self {
        let r = &t.rotation;
        Self {
            scale: t.scale,
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }

    pub fn to_sim3(&self) -> Result<Sim3Transform, IoError> {
        let r = &self.rotation;
        Sim3Transform::new(
            self.scale,
            Mat3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
            Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
        .map_err(|e| IoError::Validation(format!("stored transform invalid: {e}")))
    }
}

/// One line of `registered_scene.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredRecord {
    pub track_id: String,
    /// Absent for objects that never produced a pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim3: Option<Sim3Record>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_m: Option<f64>,
    pub status: String,
}

/// `out/scale.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub scale: f64,
    pub w_virtual: f64,
    pub anchor_point_count: usize,
}

/// `out/floor.json`: the fitted floor plane in the metric frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorRecord {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_count: usize,
}

/// `out/world_transform.json`: dimensionless package frame to canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTransformRecord {
    pub sim3: Sim3Record,
}

/// `out/canonical_views.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CanonicalViewsRecord {
    /// Selected observation frame per surviving track.
    pub views: BTreeMap<String, usize>,
    /// Tracks dropped by the observation-count filter.
    pub dropped: Vec<String>,
    /// Tracks whose every view scored zero.
    pub unviewable: Vec<String>,
}

/// `out/extraction.json` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub track_id: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_frame: Option<usize>,
    pub point_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub targets: Vec<TargetRecord>,
}

/// `out/refine.json`: scene-consistency summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRecord {
    /// Track chosen as the Manhattan anchor; absent when nothing was placed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    pub fixpoint: bool,
    pub sweeps: usize,
}

/// `out/report.json` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub track_id: String,
    pub label: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nvss_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_scale: Option<f64>,
    pub vertex_count: usize,
    pub face_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    /// Human-readable provenance notes, including the view-synthesis
    /// substitution (silhouette rasterization instead of learned rendering).
    pub notes: Vec<String>,
    /// `ground_truth` when scored against a generator's reference frame,
    /// `pipeline` when self-consistent.
    pub eval_frame: String,
    pub config: PipelineConfig,
    pub objects: Vec<ReportRow>,
    /// Mean over evaluated objects; `null` when nothing was evaluated.
    pub miou: Option<f64>,
}

/// `out/ablation_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub config: PipelineConfig,
    pub variants: Vec<String>,
    pub objects: Vec<AblationRow>,
    pub miou: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub track_id: String,
    pub iou: BTreeMap<String, Option<f64>>,
    pub status: BTreeMap<String, String>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json { path: path.display().to_string(), msg: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| IoError::Json { path: path.display().to_string(), msg: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::file(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::Json {
            path: format!("{}:{}", path.display(), i + 1),
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| IoError::Json { path: path.display().to_string(), msg: e.to_string() })?;
        file.write_all(line.as_bytes()).map_err(|e| IoError::file(path, e))?;
        file.write_all(b"\n").map_err(|e| IoError::file(path, e))?;
    }
    Ok(())
}

/// Loads a camera trajectory, enforcing strictly increasing frame indices.
pub fn load_cameras(path: &Path) -> Result<Vec<CameraFrame>, IoError> {
    let records: Vec<CameraRecord> = read_jsonl(path)?;
    let mut cameras = Vec::with_capacity(records.len());
    let mut last: Option<usize> = None;
    for rec in &records {
        if let Some(prev) = last {
            if rec.frame_index <= prev {
                return Err(IoError::Validation(format!(
                    "camera frame indices must strictly increase: {} after {prev}",
                    rec.frame_index
                )));
            }
        }
        last = Some(rec.frame_index);
        cameras.push(rec.to_frame()?);
    }
    Ok(cameras)
}

pub fn save_cameras(path: &Path, cameras: &[CameraFrame]) -> Result<(), IoError> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from_frame).collect();
    write_jsonl(path, &records)
}
