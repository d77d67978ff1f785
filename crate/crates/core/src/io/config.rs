//! Pipeline configuration: one struct, one JSON file, flag overrides.
//!
//! Every tunable lives here so a run can be reproduced from the effective
//! config echoed into its outputs. CLI flags address fields by dotted path
//! (`registration.trim_ratio=0.5`) and are applied on top of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grounding::{ConsolidationParams, ScoreWeights};

use super::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; per-object generators derive from it deterministically.
    pub seed: u64,
    pub scale: ScaleConfig,
    pub grounding: GroundingConfig,
    pub extraction: ExtractionConfig,
    pub registration: RegistrationConfig,
    pub consistency: ConsistencyConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scale: ScaleConfig::default(),
            grounding: GroundingConfig::default(),
            extraction: ExtractionConfig::default(),
            registration: RegistrationConfig::default(),
            consistency: ConsistencyConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    /// Per-axis trim fraction for the anchor extent box.
    pub trim: f64,
    /// Minimum points surviving the frustum cull.
    pub min_anchor_points: usize,
    /// Depth percentile band kept before measuring the anchor extent.
    pub depth_gate: [f64; 2],
    /// `global_max` uses the largest box axis; `horizontal_only` restricts
    /// to the camera's right and forward axes.
    pub extent_mode: ExtentMode,
    /// HTTP endpoint returning an anchor spec for a posted image; `null`
    /// reads `anchor.json` from the package instead.
    pub anchor_endpoint: Option<String>,
    pub http_timeout_s: f64,
    pub http_retries: u32,
    /// Ablation: force scale 1.0 while still tagging the frame metric.
    pub disable_anchor_scale: bool,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            trim: 0.02,
            min_anchor_points: 50,
            depth_gate: [0.05, 0.95],
            extent_mode: ExtentMode::GlobalMax,
            anchor_endpoint: None,
            http_timeout_s: 30.0,
            http_retries: 2,
            disable_anchor_scale: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentMode {
    GlobalMax,
    HorizontalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingConfig {
    pub iou_thresh: f64,
    pub containment_thresh: f64,
    /// Minimum observation count for a track to survive.
    pub n_min: usize,
    pub w_area: f64,
    pub w_trunc: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { iou_thresh: 0.5, containment_thresh: 0.9, n_min: 5, w_area: 1.0, w_trunc: 2.0 }
    }
}

impl GroundingConfig {
    pub fn weights(&self) -> ScoreWeights {
        ScoreWeights { w_area: self.w_area, w_trunc: self.w_trunc }
    }

    pub fn consolidation(&self) -> ConsolidationParams {
        ConsolidationParams {
            iou_thresh: self.iou_thresh,
            containment_thresh: self.containment_thresh,
            n_min: self.n_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Cluster radius in scene units; `null` derives 2.5x the median
    /// nearest-neighbor distance of the gated candidates.
    pub eps: Option<f64>,
    pub min_pts: usize,
    /// Depth percentile band kept before clustering.
    pub depth_gate: [f64; 2],
    /// Objects with fewer extracted points are skipped, not errored.
    pub min_target_points: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { eps: None, min_pts: 10, depth_gate: [0.05, 0.95], min_target_points: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub ransac_iterations: usize,
    /// Point-to-plane inlier distance for the floor fit, scene units.
    pub ransac_inlier_dist: f64,
    pub min_floor_inliers: usize,
    /// Fraction of source samples kept per trimmed ICP iteration.
    pub trim_ratio: f64,
    /// Surface samples drawn from each mesh before ICP.
    pub mesh_samples: usize,
    pub max_iterations: usize,
    /// Converged when trimmed RMSE improves by less than this.
    pub tolerance: f64,
    /// Yaw hypotheses within this relative IoU of the best tie-break on depth.
    pub yaw_tie_margin: f64,
    /// Let ICP translate vertically as well (for hanging objects).
    pub vertical_release: bool,
    /// Ablation: stop after the coarse alignment.
    pub disable_tricp: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            ransac_iterations: 1000,
            ransac_inlier_dist: 0.02,
            min_floor_inliers: 500,
            trim_ratio: 0.6,
            mesh_samples: 2000,
            max_iterations: 50,
            tolerance: 1e-6,
            yaw_tie_margin: 0.05,
            vertical_release: false,
            disable_tricp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Footprint overlap ratio above which an object counts as embedded in
    /// the anchor.
    pub embedded_threshold: f64,
    /// Extra clearance added when repulsing intersecting objects, meters.
    pub repulsion_margin: f64,
    pub snap_enabled: bool,
    pub collision_enabled: bool,
    /// Ablation: skip yaw snapping, collision resolution, and ground leveling.
    pub disable_geometric_grounding: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            embedded_threshold: 0.30,
            repulsion_margin: 0.01,
            snap_enabled: true,
            collision_enabled: true,
            disable_geometric_grounding: false,
        }
    }
}

impl ConsistencyConfig {
    /// Runtime options: the master grounding switch turns off snapping,
    /// collision resolution, and ground leveling together.
    pub fn runtime(&self) -> crate::consistency::RefineOptions {
        crate::consistency::RefineOptions {
            embedded_threshold: self.embedded_threshold,
            repulsion_margin: self.repulsion_margin,
            snap_enabled: self.snap_enabled && !self.disable_geometric_grounding,
            collision_enabled: self.collision_enabled && !self.disable_geometric_grounding,
            leveling_enabled: !self.disable_geometric_grounding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Render all objects into a shared depth buffer so occluded pixels do
    /// not count toward an object's silhouette.
    pub occlusion: bool,
}

#[allow(clippy::derivable_impls)]
impl Default for EvalConfig {
    fn default() -> Self {
        Self { occlusion: false }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| IoError::file(path, e))
    }

    /// Sets one field addressed by dotted path; the value is parsed as JSON
    /// first and falls back to a string.
    pub fn apply_override(&mut self, path: &str, value: &str) -> Result<(), IoError> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut cursor = &mut root;
        let segments: Vec<&str> = path.split('.').collect();
        for (i, seg) in segments.iter().enumerate() {
            let map = cursor
                .as_object_mut()
                .ok_or_else(|| IoError::Config(format!("'{}' is not a config section", segments[..i].join("."))))?;
            cursor = map
                .get_mut(*seg)
                .ok_or_else(|| IoError::Config(format!("unknown config field '{path}'")))?;
        }
        *cursor = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let updated: Self = serde_json::from_value(root)
            .map_err(|e| IoError::Config(format!("override '{path}={value}' rejected: {e}")))?;
        *self = updated;
        self.validate()
    }

    /// Field-by-field range checks; called after every load or override.
    pub fn validate(&self) -> Result<(), IoError> {
        let err = |msg: String| Err(IoError::Config(msg));
        if !(0.0..0.5).contains(&self.scale.trim) {
            return err(format!("scale.trim must lie in [0, 0.5), got {}", self.scale.trim));
        }
        for (name, gate) in
            [("scale.depth_gate", self.scale.depth_gate), ("extraction.depth_gate", self.extraction.depth_gate)]
        {
            if !(0.0..=1.0).contains(&gate[0]) || !(0.0..=1.0).contains(&gate[1]) || gate[0] >= gate[1] {
                return err(format!("{name} must satisfy 0 <= lo < hi <= 1, got [{}, {}]", gate[0], gate[1]));
            }
        }
        if self.scale.http_timeout_s <= 0.0 {
            return err(format!("scale.http_timeout_s must be positive, got {}", self.scale.http_timeout_s));
        }
        for (name, v) in [
            ("grounding.iou_thresh", self.grounding.iou_thresh),
            ("grounding.containment_thresh", self.grounding.containment_thresh),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.grounding.w_area <= 0.0 {
            return err(format!("grounding.w_area must be positive, got {}", self.grounding.w_area));
        }
        if self.grounding.w_trunc < 0.0 {
            return err(format!("grounding.w_trunc must be non-negative, got {}", self.grounding.w_trunc));
        }
        if let Some(eps) = self.extraction.eps {
            if !(eps.is_finite() && eps > 0.0) {
                return err(format!("extraction.eps must be positive, got {eps}"));
            }
        }
        if self.extraction.min_pts == 0 {
            return err("extraction.min_pts must be at least 1".into());
        }
        if self.registration.ransac_iterations == 0 {
            return err("registration.ransac_iterations must be at least 1".into());
        }
        if self.registration.ransac_inlier_dist <= 0.0 {
            return err(format!(
                "registration.ransac_inlier_dist must be positive, got {}",
                self.registration.ransac_inlier_dist
            ));
        }
        if !(0.0 < self.registration.trim_ratio && self.registration.trim_ratio <= 1.0) {
            return err(format!(
                "registration.trim_ratio must lie in (0, 1], got {}",
                self.registration.trim_ratio
            ));
        }
        if self.registration.mesh_samples == 0 {
            return err("registration.mesh_samples must be at least 1".into());
        }
        if self.registration.tolerance <= 0.0 {
            return err(format!("registration.tolerance must be positive, got {}", self.registration.tolerance));
        }
        if !(0.0..=1.0).contains(&self.registration.yaw_tie_margin) {
            return err(format!(
                "registration.yaw_tie_margin must lie in [0, 1], got {}",
                self.registration.yaw_tie_margin
            ));
        }
        if !(0.0..=1.0).contains(&self.consistency.embedded_threshold) {
            return err(format!(
                "consistency.embedded_threshold must lie in [0, 1], got {}",
                self.consistency.embedded_threshold
            ));
        }
        if self.consistency.repulsion_margin < 0.0 {
            return err(format!(
                "consistency.repulsion_margin must be non-negative, got {}",
                self.consistency.repulsion_margin
            ));
        }
        Ok(())
    }
}
