//! Stage driver: runs the fusion chain over one scene package directory and
//! writes one artifact per stage under an output directory.
//!
//! Stage order is scale, ground, extract, register, refine, eval. Every
//! `run_*` method recomputes its own stage and rewrites its artifacts;
//! `ensure_*` loads an artifact already on disk instead of recomputing, so a
//! single stage can be re-run against earlier results. Both paths are
//! deterministic: identical inputs and config reproduce every artifact byte
//! for byte, at any worker count.
//!
//! A `Runner` moves forward through the chain. Re-running an earlier stage
//! on the same value does not invalidate later caches; use a fresh `Runner`
//! to restart.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::consistency::refine_scene;
use crate::eval::{
    build_report, ground_truth_cameras, pipeline_cameras, EvalFrame, EvalScene, METHOD_NOTE,
};
use crate::extraction::{extract_target, ExtractError, TargetCloud};
use crate::geometry::{FrameTag, Mat3, SceneCloud, Sim3Transform, Vec3};
use crate::grounding::{
    filter_tracklets, merge_intraframe, select_canonical_view, FrameMask, GroundingError,
    TrackedMaskSet,
};
use crate::io::obj::{save_obj, RawMesh};
use crate::io::ply::{load_point_cloud, save_point_cloud, PlyFormat};
use crate::io::records::{
    self, CanonicalViewsRecord, ExtractionRecord, FloorRecord, MetaRecord, RefineRecord,
    RegisteredRecord, ReportRecord, ReportRow, ScaleRecord, Sim3Record, TargetRecord,
    WorldTransformRecord,
};
use crate::io::{IoError, PipelineConfig, ScenePackage};
use crate::registration::{
    fit_floor_plane, object_seed, register_object, world_canonicalize, FloorPlane, ObjectStatus,
    RegisteredObject, RegistrationError,
};
use crate::scale::{compute_scale, metricize, ScaleError};
use crate::synth::GroundTruth;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

/// Applies `f` to every item, in parallel when the `parallel` feature is
/// enabled, returning results in input order either way. `jobs` bounds the
/// worker count; `None` uses the default pool.
#[cfg(feature = "parallel")]
pub fn map_objects<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    use rayon::prelude::*;
    match jobs {
        Some(1) => items.iter().map(f).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
            .install(|| items.par_iter().map(|t| f(t)).collect()),
        None => items.par_iter().map(|t| f(t)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_objects<T, R, F>(items: &[T], _jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    items.iter().map(f).collect()
}

pub struct Runner {
    pub package: ScenePackage,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    truth: Option<GroundTruth>,
    consolidated: bool,
    dropped_tracks: Vec<String>,
    scale: Option<ScaleRecord>,
    views: Option<CanonicalViewsRecord>,
    targets: Option<BTreeMap<String, TargetCloud>>,
    floor: Option<FloorPlane>,
    world: Option<Sim3Transform>,
    raw_objects: Option<Vec<RegisteredObject>>,
    refined: Option<Vec<RegisteredObject>>,
}

fn unplaced(track: &str, status: ObjectStatus) -> RegisteredObject {
    RegisteredObject {
        track_id: track.to_string(),
        pose: Sim3Transform::identity(),
        object_scale: 1.0,
        coarse_yaw: 0.0,
        yaw_scores: [0.0; 4],
        rmse_m: None,
        tricp_converged: None,
        status,
    }
}

fn object_rows(objects: &[RegisteredObject]) -> Vec<RegisteredRecord> {
    objects
        .iter()
        .map(|o| RegisteredRecord {
            track_id: o.track_id.clone(),
            sim3: o.status.is_placed().then(|| Sim3Record::from_sim3(&o.pose)),
            rmse_m: o.rmse_m,
            status: o.status.as_str().to_string(),
        })
        .collect()
}

/// Rebuilds in-memory objects from persisted rows. Registration-internal
/// diagnostics (yaw score table, convergence flag) are not persisted and
/// come back zeroed; later stages never read them.
fn objects_from_rows(rows: &[RegisteredRecord]) -> Result<Vec<RegisteredObject>, PipelineError> {
    rows.iter()
        .map(|r| {
            let status = ObjectStatus::from_str(&r.status).map_err(IoError::Validation)?;
            let pose = match &r.sim3 {
                Some(s) => s.to_sim3()?,
                None => Sim3Transform::identity(),
            };
            Ok(RegisteredObject {
                track_id: r.track_id.clone(),
                object_scale: pose.scale,
                pose,
                coarse_yaw: 0.0,
                yaw_scores: [0.0; 4],
                rmse_m: r.rmse_m,
                tricp_converged: None,
                status,
            })
        })
        .collect()
}

impl Runner {
    /// Prepares the output directory and echoes the effective config into it.
    /// When the package carries `ground_truth.json`, evaluation scores
    /// against the generator's reference frame instead of the pipeline's own.
    pub fn new(
        package: ScenePackage,
        out_dir: &Path,
        jobs: Option<usize>,
    ) -> Result<Self, PipelineError> {
        fs::create_dir_all(out_dir).map_err(|e| IoError::file(out_dir, e))?;
        let truth = if package.root.join("ground_truth.json").exists() {
            Some(GroundTruth::load(&package.root)?)
        } else {
            None
        };
        records::write_json(&out_dir.join("effective_config.json"), &package.config)?;
        Ok(Runner {
            package,
            out_dir: out_dir.to_path_buf(),
            jobs,
            truth,
            consolidated: false,
            dropped_tracks: Vec::new(),
            scale: None,
            views: None,
            targets: None,
            floor: None,
            world: None,
            raw_objects: None,
            refined: None,
        })
    }

    pub fn world_transform(&self) -> Option<&Sim3Transform> {
        self.world.as_ref()
    }

    pub fn refined_objects(&self) -> Option<&[RegisteredObject]> {
        self.refined.as_deref()
    }

    /// Replaces the loaded masks with their consolidated form: intra-frame
    /// same-label merging, then the observation-count filter. Tracks without
    /// a mesh group under their own id (no label to share).
    fn consolidate(&mut self) -> Result<(), PipelineError> {
        if self.consolidated {
            return Ok(());
        }
        let params = self.package.config.grounding.consolidation();
        let mut merged = TrackedMaskSet::default();
        let mut frames: BTreeMap<usize, BTreeMap<String, Vec<FrameMask>>> = BTreeMap::new();
        for (track, track_masks) in &self.package.masks.tracks {
            let label = self
                .package
                .objects
                .get(track)
                .map_or_else(|| track.clone(), |m| m.label.clone());
            for (&frame, mask) in track_masks {
                frames
                    .entry(frame)
                    .or_default()
                    .entry(label.clone())
                    .or_default()
                    .push(FrameMask { track_id: track, mask });
            }
        }
        for (&frame, groups) in &frames {
            for group in groups.values() {
                for (track, mask) in merge_intraframe(group, &params)? {
                    merged.tracks.entry(track).or_default().insert(frame, mask);
                }
            }
        }
        let before: Vec<String> = merged.tracks.keys().cloned().collect();
        let filtered = filter_tracklets(merged, params.n_min);
        self.dropped_tracks =
            before.into_iter().filter(|t| !filtered.tracks.contains_key(t)).collect();
        self.package.masks = filtered;
        self.consolidated = true;
        Ok(())
    }

    pub fn run_scale(&mut self) -> Result<ScaleRecord, PipelineError> {
        let record = if self.package.config.scale.disable_anchor_scale {
            // The ablation runs at unit scale without consulting any anchor,
            // so packages without one still process.
            ScaleRecord { scale: 1.0, w_virtual: 0.0, anchor_point_count: 0 }
        } else {
            compute_scale(&self.package, &self.package.config.scale)?.record
        };
        records::write_json(&self.out_dir.join("scale.json"), &record)?;
        self.scale = Some(record.clone());
        Ok(record)
    }

    fn ensure_scale(&mut self) -> Result<(), PipelineError> {
        if self.scale.is_some() {
            return Ok(());
        }
        let path = self.out_dir.join("scale.json");
        if path.exists() {
            self.scale = Some(records::read_json(&path)?);
        } else {
            self.run_scale()?;
        }
        Ok(())
    }

    fn apply_views(&mut self, record: &CanonicalViewsRecord) {
        for (track, mesh) in self.package.objects.iter_mut() {
            mesh.canonical_frame = record.views.get(track).copied();
        }
    }

    pub fn run_ground(&mut self) -> Result<CanonicalViewsRecord, PipelineError> {
        self.consolidate()?;
        let weights = self.package.config.grounding.weights();
        let mut views = BTreeMap::new();
        let mut unviewable = Vec::new();
        for (track, frames) in &self.package.masks.tracks {
            match select_canonical_view(track, frames, &weights) {
                Ok((frame, _)) => {
                    views.insert(track.clone(), frame);
                }
                Err(GroundingError::NoValidView(_)) => unviewable.push(track.clone()),
                Err(e) => return Err(e.into()),
            }
        }
        let record =
            CanonicalViewsRecord { views, dropped: self.dropped_tracks.clone(), unviewable };
        self.apply_views(&record);
        // The chosen frame lives next to the mesh it describes, when the
        // package exists on disk.
        for (track, mesh) in &self.package.objects {
            let dir = self.package.root.join("objects").join(track);
            if dir.is_dir() {
                let meta =
                    MetaRecord { label: mesh.label.clone(), canonical_frame: mesh.canonical_frame };
                records::write_json(&dir.join("meta.json"), &meta)?;
            }
        }
        records::write_json(&self.out_dir.join("canonical_views.json"), &record)?;
        self.views = Some(record.clone());
        Ok(record)
    }

    fn ensure_views(&mut self) -> Result<(), PipelineError> {
        if self.views.is_some() {
            return Ok(());
        }
        self.consolidate()?;
        let path = self.out_dir.join("canonical_views.json");
        if path.exists() {
            let record: CanonicalViewsRecord = records::read_json(&path)?;
            self.apply_views(&record);
            self.views = Some(record);
        } else {
            self.run_ground()?;
        }
        Ok(())
    }

    pub fn run_extract(&mut self) -> Result<ExtractionRecord, PipelineError> {
        self.ensure_scale()?;
        self.ensure_views()?;
        let scale = self.scale.as_ref().expect("ensured").scale;
        let views = self.views.as_ref().expect("ensured").views.clone();
        let (cloud, cameras) = metricize(&self.package.cloud, &self.package.cameras, scale);
        let config = self.package.config.extraction.clone();
        let work: Vec<(String, usize)> = self
            .package
            .objects
            .keys()
            .filter_map(|t| views.get(t).map(|&f| (t.clone(), f)))
            .collect();
        let masks = &self.package.masks;
        let results = map_objects(&work, self.jobs, |(track, frame)| {
            let cam = cameras
                .iter()
                .find(|c| c.frame_index == *frame)
                .expect("canonical view frame is in the trajectory");
            extract_target(&cloud, cam, &masks.tracks[track][frame], track, &config)
        });
        let mut outcomes: BTreeMap<String, Result<TargetCloud, ExtractError>> =
            work.into_iter().map(|(t, _)| t).zip(results).collect();

        let targets_dir = self.out_dir.join("targets");
        fs::create_dir_all(&targets_dir).map_err(|e| IoError::file(&targets_dir, e))?;
        let mut rows = Vec::new();
        let mut targets = BTreeMap::new();
        for track in self.package.objects.keys() {
            let row = match outcomes.remove(track) {
                Some(Ok(target)) => {
                    let debug_cloud =
                        SceneCloud::new(target.points.clone(), None, FrameTag::Metric);
                    save_point_cloud(
                        &targets_dir.join(format!("{track}.ply")),
                        &debug_cloud,
                        PlyFormat::BinaryLittleEndian,
                    )?;
                    let row = TargetRecord {
                        track_id: track.clone(),
                        status: "ok".to_string(),
                        source_frame: Some(target.source_frame),
                        point_count: target.points.len(),
                        inlier_fraction: Some(target.inlier_fraction),
                        eps: Some(target.eps),
                    };
                    targets.insert(track.clone(), target);
                    row
                }
                Some(Err(err)) => {
                    let status = match err {
                        ExtractError::NoCandidates => "no_candidates".to_string(),
                        ExtractError::ClusterTooSmall { .. } => "cluster_too_small".to_string(),
                        ExtractError::ResolutionMismatch { .. } => "resolution_mismatch".to_string(),
                    };
                    TargetRecord {
                        track_id: track.clone(),
                        status,
                        source_frame: None,
                        point_count: 0,
                        inlier_fraction: None,
                        eps: None,
                    }
                }
                // Dropped by the tracklet filter, unviewable, or maskless.
                None => TargetRecord {
                    track_id: track.clone(),
                    status: "no_view".to_string(),
                    source_frame: None,
                    point_count: 0,
                    inlier_fraction: None,
                    eps: None,
                },
            };
            rows.push(row);
        }
        let record = ExtractionRecord { targets: rows };
        records::write_json(&self.out_dir.join("extraction.json"), &record)?;
        self.targets = Some(targets);
        Ok(record)
    }

    fn ensure_targets(&mut self) -> Result<(), PipelineError> {
        if self.targets.is_some() {
            return Ok(());
        }
        self.ensure_scale()?;
        self.ensure_views()?;
        let path = self.out_dir.join("extraction.json");
        if !path.exists() {
            self.run_extract()?;
            return Ok(());
        }
        let record: ExtractionRecord = records::read_json(&path)?;
        let mut targets = BTreeMap::new();
        for row in &record.targets {
            if row.status != "ok" {
                continue;
            }
            let ply = self.out_dir.join("targets").join(format!("{}.ply", row.track_id));
            let cloud = load_point_cloud(&ply, FrameTag::Metric)?;
            targets.insert(
                row.track_id.clone(),
                TargetCloud {
                    track_id: row.track_id.clone(),
                    points: cloud.points,
                    source_frame: row.source_frame.ok_or_else(|| {
                        IoError::Validation(format!(
                            "extraction row '{}' is ok but has no source frame",
                            row.track_id
                        ))
                    })?,
                    inlier_fraction: row.inlier_fraction.unwrap_or(1.0),
                    eps: row.eps.unwrap_or(0.0),
                },
            );
        }
        self.targets = Some(targets);
        Ok(())
    }

    pub fn run_register(&mut self) -> Result<Vec<RegisteredRecord>, PipelineError> {
        self.ensure_targets()?;
        let scale = self.scale.as_ref().expect("ensured").scale;
        let (cloud, cameras) = metricize(&self.package.cloud, &self.package.cameras, scale);
        let config = self.package.config.registration.clone();
        let seed = self.package.config.seed;

        let floor = fit_floor_plane(&cloud, &cameras, &config, seed)?;
        records::write_json(
            &self.out_dir.join("floor.json"),
            &FloorRecord {
                normal: [floor.normal.x, floor.normal.y, floor.normal.z],
                offset: floor.offset,
                inlier_count: floor.inlier_count,
            },
        )?;
        let (_, canon_cams, rigid) = world_canonicalize(&cloud, &cameras, &floor);
        let world = rigid.compose(
            &Sim3Transform::new(scale, Mat3::identity(), Vec3::zeros())
                .expect("pure scaling is a valid transform"),
        );
        records::write_json(
            &self.out_dir.join("world_transform.json"),
            &WorldTransformRecord { sim3: Sim3Record::from_sim3(&world) },
        )?;

        let targets = self.targets.as_ref().expect("ensured");
        let masks = &self.package.masks;
        let meshes: Vec<_> = self.package.objects.values().collect();
        let objects: Vec<RegisteredObject> = map_objects(&meshes, self.jobs, |mesh| {
            let track = &mesh.track_id;
            let Some(target) = targets.get(track) else {
                return unplaced(track, ObjectStatus::SkippedExtraction);
            };
            let canonical_target = TargetCloud {
                track_id: target.track_id.clone(),
                points: rigid.apply_points(&target.points),
                source_frame: target.source_frame,
                inlier_fraction: target.inlier_fraction,
                eps: target.eps,
            };
            let cam = canon_cams
                .iter()
                .find(|c| c.frame_index == target.source_frame)
                .expect("target source frame is in the trajectory");
            let mask = &masks.tracks[track][&target.source_frame];
            match register_object(
                mesh,
                &canonical_target,
                cam,
                mask,
                &config,
                object_seed(seed, track),
            ) {
                Ok(registered) => registered,
                Err(_) => unplaced(track, ObjectStatus::CoarseFailed),
            }
        });

        let rows = object_rows(&objects);
        records::write_jsonl(&self.out_dir.join("registered_raw.jsonl"), &rows)?;
        self.floor = Some(floor);
        self.world = Some(world);
        self.raw_objects = Some(objects);
        Ok(rows)
    }

    fn ensure_register(&mut self) -> Result<(), PipelineError> {
        if self.raw_objects.is_some() {
            return Ok(());
        }
        self.ensure_targets()?;
        let raw = self.out_dir.join("registered_raw.jsonl");
        let world_path = self.out_dir.join("world_transform.json");
        let floor_path = self.out_dir.join("floor.json");
        if raw.exists() && world_path.exists() && floor_path.exists() {
            let world: WorldTransformRecord = records::read_json(&world_path)?;
            self.world = Some(world.sim3.to_sim3()?);
            let floor: FloorRecord = records::read_json(&floor_path)?;
            self.floor = Some(FloorPlane {
                normal: Vec3::new(floor.normal[0], floor.normal[1], floor.normal[2]),
                offset: floor.offset,
                inlier_count: floor.inlier_count,
            });
            let rows: Vec<RegisteredRecord> = records::read_jsonl(&raw)?;
            self.raw_objects = Some(objects_from_rows(&rows)?);
        } else {
            self.run_register()?;
        }
        Ok(())
    }

    pub fn run_refine(&mut self) -> Result<Vec<RegisteredRecord>, PipelineError> {
        self.ensure_register()?;
        let mut objects = self.raw_objects.clone().expect("ensured");
        let vertices: BTreeMap<String, Vec<Vec3>> = self
            .package
            .objects
            .iter()
            .map(|(k, m)| (k.clone(), m.vertices.clone()))
            .collect();
        let options = self.package.config.consistency.runtime();
        let report = refine_scene(&mut objects, &vertices, &options);
        records::write_json(
            &self.out_dir.join("refine.json"),
            &RefineRecord { anchor: report.anchor, fixpoint: report.fixpoint, sweeps: report.sweeps },
        )?;
        let rows = object_rows(&objects);
        records::write_jsonl(&self.out_dir.join("registered_scene.jsonl"), &rows)?;

        let fused_dir = self.out_dir.join("fused");
        fs::create_dir_all(&fused_dir).map_err(|e| IoError::file(&fused_dir, e))?;
        for obj in &objects {
            if !obj.status.is_placed() {
                continue;
            }
            let mesh = &self.package.objects[&obj.track_id];
            let posed = RawMesh {
                vertices: obj.pose.apply_points(&mesh.vertices),
                faces: mesh.faces.clone(),
            };
            save_obj(&fused_dir.join(format!("{}.obj", obj.track_id)), &posed)?;
        }
        self.refined = Some(objects);
        Ok(rows)
    }

    fn ensure_refine(&mut self) -> Result<(), PipelineError> {
        if self.refined.is_some() {
            return Ok(());
        }
        self.ensure_register()?;
        let path = self.out_dir.join("registered_scene.jsonl");
        if path.exists() {
            let rows: Vec<RegisteredRecord> = records::read_jsonl(&path)?;
            self.refined = Some(objects_from_rows(&rows)?);
        } else {
            self.run_refine()?;
        }
        Ok(())
    }

    pub fn run_eval(&mut self) -> Result<ReportRecord, PipelineError> {
        self.ensure_refine()?;
        let world = self.world.as_ref().expect("ensured");
        let (frame, cameras) = match &self.truth {
            Some(truth) => (EvalFrame::GroundTruth, ground_truth_cameras(world, truth)),
            None => (EvalFrame::Pipeline, pipeline_cameras(&self.package, world)),
        };
        let objects = self.refined.as_ref().expect("ensured");
        let scene = EvalScene {
            package: &self.package,
            objects,
            cameras: &cameras,
            frame,
            occlusion: self.package.config.eval.occlusion,
        };
        let report = build_report(&scene);
        let rows: Vec<ReportRow> = report
            .rows
            .iter()
            .map(|r| ReportRow {
                track_id: r.track_id.clone(),
                label: r.label.clone(),
                status: r.status.clone(),
                nvss_iou: r.nvss_iou,
                rmse_m: r.rmse_m,
                object_scale: r.object_scale,
                vertex_count: r.vertex_count,
                face_count: r.face_count,
            })
            .collect();
        let mut notes = vec![METHOD_NOTE.to_string()];
        notes.extend(self.package.warnings.iter().cloned());
        let record = ReportRecord {
            notes,
            eval_frame: match frame {
                EvalFrame::GroundTruth => "ground_truth".to_string(),
                EvalFrame::Pipeline => "pipeline".to_string(),
            },
            config: self.package.config.clone(),
            objects: rows,
            miou: report.miou,
        };
        records::write_json(&self.out_dir.join("report.json"), &record)?;
        Ok(record)
    }

    pub fn run_all(&mut self) -> Result<ReportRecord, PipelineError> {
        self.run_scale()?;
        self.run_ground()?;
        self.run_extract()?;
        self.run_register()?;
        self.run_refine()?;
        self.run_eval()
    }
}

pub const ABLATION_VARIANTS: [&str; 4] =
    ["full", "disable_anchor_scale", "disable_tricp", "disable_geometric_grounding"];

fn variant_config(base: &PipelineConfig, variant: &str) -> PipelineConfig {
    let mut config = base.clone();
    config.scale.disable_anchor_scale = variant == "disable_anchor_scale";
    config.registration.disable_tricp = variant == "disable_tricp";
    config.consistency.disable_geometric_grounding = variant == "disable_geometric_grounding";
    config
}

/// Runs the chain once per variant under `out/ablations/<variant>/` and
/// assembles the side-by-side comparison. A variant that dies outright
/// contributes zero-IoU rows carrying the failure instead of aborting the
/// comparison.
pub fn run_ablations(
    package: &ScenePackage,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<records::AblationRecord, PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| IoError::file(out_dir, e))?;
    let mut miou = BTreeMap::new();
    let mut per_variant: BTreeMap<String, BTreeMap<String, (Option<f64>, String)>> =
        BTreeMap::new();
    for variant in ABLATION_VARIANTS {
        let mut pkg = package.clone();
        pkg.config = variant_config(&package.config, variant);
        let sub = out_dir.join("ablations").join(variant);
        match Runner::new(pkg, &sub, jobs).and_then(|mut r| r.run_all()) {
            Ok(report) => {
                miou.insert(variant.to_string(), report.miou);
                per_variant.insert(
                    variant.to_string(),
                    report
                        .objects
                        .iter()
                        .map(|r| (r.track_id.clone(), (r.nvss_iou, r.status.clone())))
                        .collect(),
                );
            }
            Err(err) => {
                miou.insert(variant.to_string(), Some(0.0));
                per_variant.insert(
                    variant.to_string(),
                    package
                        .objects
                        .keys()
                        .map(|t| (t.clone(), (Some(0.0), format!("pipeline_failed: {err}"))))
                        .collect(),
                );
            }
        }
    }
    let objects: Vec<records::AblationRow> = package
        .objects
        .keys()
        .map(|track| {
            let mut iou = BTreeMap::new();
            let mut status = BTreeMap::new();
            for variant in ABLATION_VARIANTS {
                let (i, s) = per_variant[variant]
                    .get(track)
                    .cloned()
                    .unwrap_or((None, "missing".to_string()));
                iou.insert(variant.to_string(), i);
                status.insert(variant.to_string(), s);
            }
            records::AblationRow { track_id: track.clone(), iou, status }
        })
        .collect();
    let record = records::AblationRecord {
        config: package.config.clone(),
        variants: ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect(),
        objects,
        miou,
    };
    records::write_json(&out_dir.join("ablation_report.json"), &record)?;
    Ok(record)
}
