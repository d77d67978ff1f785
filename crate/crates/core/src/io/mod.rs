//! Scene-package I/O.
//!
//! A package is a directory: `global_cloud.ply`, `cameras.jsonl`, per-track
//! mask directories, per-object meshes with metadata, and an optional
//! `anchor.json` and `config.json`. Loading validates every cross-reference
//! so later stages can index without checking.

pub mod config;
pub mod obj;
pub mod pgm;
pub mod ply;
pub mod records;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{CameraFrame, FrameTag, SceneCloud, Vec3};
use crate::grounding::TrackedMaskSet;

pub use config::PipelineConfig;
pub use records::AnchorSpec;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("PLY header line {line}: {msg}")]
    PlyHeader { line: usize, msg: String },
    #[error("PLY payload at {at}: {msg}")]
    PlyPayload { at: String, msg: String },
    #[error("PLY count mismatch at {at}: {msg}")]
    PlyCount { at: String, msg: String },
    #[error("PLY vertex element lacks property '{name}'")]
    PlyMissingProperty { name: String },
    #[error("{path}:{line}: {msg}")]
    Obj { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Pgm { path: String, msg: String },
    #[error("{path}: {msg}")]
    Json { path: String, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("package validation: {0}")]
    Validation(String),
    #[error("missing required file {0}")]
    Missing(PathBuf),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.display().to_string(), source }
    }
}

/// Triangle mesh for one tracked object, in generator object space
/// (right-up-back axes, roughly unit diagonal, centered near the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMesh {
    pub track_id: String,
    pub label: String,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub canonical_frame: Option<usize>,
}

impl ObjectMesh {
    pub fn validate(&self) -> Result<(), IoError> {
        if self.vertices.len() < 4 || self.faces.len() < 4 {
            return Err(IoError::Validation(format!(
                "mesh '{}' is not a solid: {} vertices, {} faces",
                self.track_id,
                self.vertices.len(),
                self.faces.len()
            )));
        }
        for (i, p) in self.vertices.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(IoError::Validation(format!(
                    "mesh '{}' vertex {i} is not finite",
                    self.track_id
                )));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= self.vertices.len()) {
                return Err(IoError::Validation(format!(
                    "mesh '{}' face indexes out of range",
                    self.track_id
                )));
            }
        }
        Ok(())
    }

    pub fn raw(&self) -> obj::RawMesh {
        obj::RawMesh { vertices: self.vertices.clone(), faces: self.faces.clone() }
    }
}

/// A fully loaded and validated scene directory.
#[derive(Debug, Clone)]
pub struct ScenePackage {
    pub root: PathBuf,
    pub cloud: SceneCloud,
    pub cameras: Vec<CameraFrame>,
    pub masks: TrackedMaskSet,
    pub objects: BTreeMap<String, ObjectMesh>,
    pub anchor: Option<AnchorSpec>,
    pub config: PipelineConfig,
    /// Non-fatal findings from validation (dropped masks, unmatched tracks).
    pub warnings: Vec<String>,
}

impl ScenePackage {
    pub fn camera_by_frame(&self, frame_index: usize) -> Option<&CameraFrame> {
        self.cameras.iter().find(|c| c.frame_index == frame_index)
    }
}

pub fn load_package(root: &Path) -> Result<ScenePackage, IoError> {
    let cloud_path = root.join("global_cloud.ply");
    if !cloud_path.exists() {
        return Err(IoError::Missing(cloud_path));
    }
    let cloud = ply::load_point_cloud(&cloud_path, FrameTag::Dimensionless)?;
    if cloud.is_empty() {
        return Err(IoError::Validation("global cloud has no points".into()));
    }

    let cameras_path = root.join("cameras.jsonl");
    if !cameras_path.exists() {
        return Err(IoError::Missing(cameras_path));
    }
    let cameras = records::load_cameras(&cameras_path)?;
    if cameras.is_empty() {
        return Err(IoError::Validation("camera trajectory is empty".into()));
    }
    let frame_lookup: BTreeMap<usize, (u32, u32)> =
        cameras.iter().map(|c| (c.frame_index, (c.width, c.height))).collect();

    let mut warnings = Vec::new();
    let mut masks = TrackedMaskSet::default();
    let masks_dir = root.join("masks");
    if masks_dir.is_dir() {
        let mut track_dirs: Vec<PathBuf> = fs::read_dir(&masks_dir)
            .map_err(|e| IoError::file(&masks_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        track_dirs.sort();
        for dir in track_dirs {
            let track_id = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut frames = BTreeMap::new();
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| IoError::file(&dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
                .collect();
            files.sort();
            for file in files {
                let stem = file.file_stem().unwrap().to_string_lossy();
                let frame_index: usize = stem.parse().map_err(|_| {
                    IoError::Validation(format!(
                        "mask file name '{}' is not a frame index",
                        file.display()
                    ))
                })?;
                let (w, h) = *frame_lookup.get(&frame_index).ok_or_else(|| {
                    IoError::Validation(format!(
                        "mask {} references frame {frame_index} absent from cameras.jsonl",
                        file.display()
                    ))
                })?;
                let mask = pgm::load_mask(&file)?;
                if mask.width != w || mask.height != h {
                    return Err(IoError::Validation(format!(
                        "mask {} is {}x{} but frame {frame_index} is {w}x{h}",
                        file.display(),
                        mask.width,
                        mask.height
                    )));
                }
                if mask.is_empty() {
                    warnings.push(format!("dropped all-background mask {}", file.display()));
                    continue;
                }
                frames.insert(frame_index, mask);
            }
            if frames.is_empty() {
                warnings.push(format!("track '{track_id}' has no usable masks"));
            } else {
                masks.tracks.insert(track_id, frames);
            }
        }
    }

    let mut objects = BTreeMap::new();
    let objects_dir = root.join("objects");
    if objects_dir.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&objects_dir)
            .map_err(|e| IoError::file(&objects_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let track_id = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mesh_path = dir.join("mesh.obj");
            if !mesh_path.exists() {
                return Err(IoError::Missing(mesh_path));
            }
            let raw = obj::load_obj(&mesh_path)?;
            let meta: records::MetaRecord = records::read_json(&dir.join("meta.json"))?;
            let mesh = ObjectMesh {
                track_id: track_id.clone(),
                label: meta.label,
                vertices: raw.vertices,
                faces: raw.faces,
                canonical_frame: meta.canonical_frame,
            };
            mesh.validate()?;
            if !masks.tracks.contains_key(&track_id) {
                return Err(IoError::Validation(format!(
                    "object '{track_id}' has a mesh but no masks"
                )));
            }
            objects.insert(track_id, mesh);
        }
    }
    for track_id in masks.tracks.keys() {
        if !objects.contains_key(track_id) {
            warnings.push(format!("track '{track_id}' has masks but no mesh; it will not be registered"));
        }
    }

    let anchor_path = root.join("anchor.json");
    let anchor = if anchor_path.exists() {
        let spec = AnchorSpec::load(&anchor_path)?;
        if !frame_lookup.contains_key(&spec.frame_index) {
            return Err(IoError::Validation(format!(
                "anchor frame {} absent from cameras.jsonl",
                spec.frame_index
            )));
        }
        Some(spec)
    } else {
        None
    };

    let config_path = root.join("config.json");
    let config = if config_path.exists() {
        PipelineConfig::load(&config_path)?
    } else {
        PipelineConfig::default()
    };

    Ok(ScenePackage {
        root: root.to_path_buf(),
        cloud,
        cameras,
        masks,
        objects,
        anchor,
        config,
        warnings,
    })
}

/// Writes a complete package directory (used by the synthetic generator).
pub fn save_package(root: &Path, package: &ScenePackage) -> Result<(), IoError> {
    fs::create_dir_all(root).map_err(|e| IoError::file(root, e))?;
    ply::save_point_cloud(&root.join("global_cloud.ply"), &package.cloud, ply::PlyFormat::BinaryLittleEndian)?;
    records::save_cameras(&root.join("cameras.jsonl"), &package.cameras)?;
    for (track_id, frames) in &package.masks.tracks {
        let dir = root.join("masks").join(track_id);
        fs::create_dir_all(&dir).map_err(|e| IoError::file(&dir, e))?;
        for (frame, mask) in frames {
            pgm::save_mask(&dir.join(format!("{frame:06}.pgm")), mask)?;
        }
    }
    for (track_id, mesh) in &package.objects {
        let dir = root.join("objects").join(track_id);
        fs::create_dir_all(&dir).map_err(|e| IoError::file(&dir, e))?;
        obj::save_obj(&dir.join("mesh.obj"), &mesh.raw())?;
        records::write_json(
            &dir.join("meta.json"),
            &records::MetaRecord { label: mesh.label.clone(), canonical_frame: mesh.canonical_frame },
        )?;
    }
    if let Some(anchor) = &package.anchor {
        records::write_json(&root.join("anchor.json"), anchor)?;
    }
    package.config.save(&root.join("config.json"))?;
    Ok(())
}
