//! Floor-plane estimation and gravity alignment.
//!
//! RANSAC proposes planes; because indoor walls can collect more inliers
//! than the floor, up to three planes are extracted sequentially and the
//! one most parallel to the mean camera down-axis wins. The scene is then
//! rotated so the floor normal is +z and shifted so the floor is z = 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CameraFrame, FrameTag, SceneCloud, Sim3Transform, Vec3};
use crate::io::config::RegistrationConfig;

use super::RegistrationError;

#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlane {
    /// Unit normal pointing from the floor toward the scene (up).
    pub normal: Vec3,
    /// Plane equation: normal . x = offset.
    pub offset: f64,
    pub inlier_count: usize,
}

impl FloorPlane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

struct Candidate {
    normal: Vec3,
    offset: f64,
    inliers: usize,
}

/// One RANSAC round over `active` points: best 3-point plane by inlier count.
fn ransac_round(
    points: &[Vec3],
    active: &[usize],
    iterations: usize,
    inlier_dist: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    if active.len() < 3 {
        return None;
    }
    let mut best: Option<Candidate> = None;
    for _ in 0..iterations {
        let i = active[rng.gen_range(0..active.len())];
        let j = active[rng.gen_range(0..active.len())];
        let k = active[rng.gen_range(0..active.len())];
        if i == j || j == k || i == k {
            continue;
        }
        let (a, b, c) = (points[i], points[j], points[k]);
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if norm < 1e-12 {
            continue;
        }
        let n = n / norm;
        let offset = n.dot(&a);
        let inliers =
            active.iter().filter(|&&p| (n.dot(&points[p]) - offset).abs() <= inlier_dist).count();
        if best.as_ref().is_none_or(|b| inliers > b.inliers) {
            best = Some(Candidate { normal: n, offset, inliers });
        }
    }
    best
}

/// Mean camera down-axis in world coordinates, normalized.
fn mean_down_axis(cameras: &[CameraFrame]) -> Option<Vec3> {
    if cameras.is_empty() {
        return None;
    }
    let sum: Vec3 = cameras.iter().map(|c| c.down_axis()).sum();
    let n = sum.norm();
    if n < 1e-12 {
        None
    } else {
        Some(sum / n)
    }
}

/// Least-squares plane through a point subset: centroid plus the smallest
/// principal axis of the scatter.
fn ls_refit(points: &[Vec3], indices: &[usize]) -> Option<(Vec3, f64)> {
    if indices.len() < 3 {
        return None;
    }
    let centroid: Vec3 =
        indices.iter().map(|&i| points[i]).sum::<Vec3>() / indices.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for &i in indices {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut min_i = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_i] {
            min_i = i;
        }
    }
    let n = eig.eigenvectors.column(min_i).into_owned();
    let norm = n.norm();
    if norm < 1e-12 {
        return None;
    }
    let n = n / norm;
    Some((n, n.dot(&centroid)))
}

pub fn fit_floor_plane(
    cloud: &SceneCloud,
    cameras: &[CameraFrame],
    config: &RegistrationConfig,
    seed: u64,
) -> Result<FloorPlane, RegistrationError> {
    let points = &cloud.points;
    if points.len() < config.min_floor_inliers {
        return Err(RegistrationError::FloorNotFound {
            best_inliers: 0,
            need: config.min_floor_inliers,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut active: Vec<usize> = (0..points.len()).collect();
    let mut candidates = Vec::new();
    for _ in 0..3 {
        let Some(c) =
            ransac_round(points, &active, config.ransac_iterations, config.ransac_inlier_dist, &mut rng)
        else {
            break;
        };
        if c.inliers < config.min_floor_inliers {
            // Record for diagnostics but stop extracting: later rounds only
            // see fewer points.
            if candidates.is_empty() {
                return Err(RegistrationError::FloorNotFound {
                    best_inliers: c.inliers,
                    need: config.min_floor_inliers,
                });
            }
            break;
        }
        active.retain(|&p| (c.normal.dot(&points[p]) - c.offset).abs() > config.ransac_inlier_dist);
        candidates.push(c);
        if active.len() < config.min_floor_inliers {
            break;
        }
    }
    if candidates.is_empty() {
        return Err(RegistrationError::FloorNotFound {
            best_inliers: 0,
            need: config.min_floor_inliers,
        });
    }

    // The floor is the candidate whose normal best matches gravity as hinted
    // by the cameras; without cameras, the biggest plane wins.
    let chosen = match mean_down_axis(cameras) {
        Some(down) => candidates
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| {
                let da = a.normal.dot(&down).abs();
                let db = b.normal.dot(&down).abs();
                da.total_cmp(&db).then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .unwrap(),
        None => 0,
    };
    let chosen = &candidates[chosen];

    // Refit on the chosen plane's inliers measured against the full cloud.
    let inliers: Vec<usize> = (0..points.len())
        .filter(|&p| (chosen.normal.dot(&points[p]) - chosen.offset).abs() <= config.ransac_inlier_dist)
        .collect();
    let (mut normal, mut offset) =
        ls_refit(points, &inliers).unwrap_or((chosen.normal, chosen.offset));

    // Orient the normal from the floor toward the scene's point mass.
    let centroid: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    if normal.dot(&centroid) - offset < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    Ok(FloorPlane { normal, offset, inlier_count: inliers.len() })
}

/// Rigid transform taking the floor plane to z = 0 with its normal at +z.
pub fn canonical_transform(floor: &FloorPlane) -> Sim3Transform {
    let n = floor.normal;
    let z = Vec3::new(0.0, 0.0, 1.0);
    let c = n.dot(&z);
    let rotation = if c > 1.0 - 1e-12 {
        nalgebra::Matrix3::identity()
    } else if c < -1.0 + 1e-12 {
        // Antiparallel: half turn about x flips z.
        nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
    } else {
        let axis = n.cross(&z);
        let s = axis.norm();
        let axis = axis / s;
        nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_unchecked(axis),
            s.atan2(c),
        )
        .into_inner()
    };
    // The rotated plane is z = offset; drop it to z = 0.
    Sim3Transform::new(1.0, rotation, Vec3::new(0.0, 0.0, -floor.offset)).unwrap()
}

/// Applies the canonicalizing transform to the whole scene.
pub fn world_canonicalize(
    cloud: &SceneCloud,
    cameras: &[CameraFrame],
    floor: &FloorPlane,
) -> (SceneCloud, Vec<CameraFrame>, Sim3Transform) {
    let g = canonical_transform(floor);
    let points = g.apply_points(&cloud.points);
    let out_cloud = SceneCloud::new(points, cloud.colors.clone(), FrameTag::Canonical);
    let out_cams = cameras.iter().map(|c| c.transformed(&g)).collect();
    (out_cloud, out_cams, g)
}
