//! Per-object target extraction.
//!
//! Projects the scene cloud into an object's canonical view, keeps the
//! points landing on foreground mask pixels, gates their depth band, and
//! isolates the dominant density cluster. The survivors are the target
//! cloud the object mesh is registered against.

use thiserror::Error;

use crate::geometry::{CameraFrame, SceneCloud, Vec3};
use crate::grounding::BinaryMask;
use crate::io::config::ExtractionConfig;
use crate::scale::depth_gate;
use crate::spatial::KdTree;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("mask is {mask_w}x{mask_h} but camera frame is {cam_w}x{cam_h}")]
    ResolutionMismatch { mask_w: u32, mask_h: u32, cam_w: u32, cam_h: u32 },
    #[error("no cloud points project into the mask")]
    NoCandidates,
    #[error("dominant cluster has {got} points, need {need}")]
    ClusterTooSmall { got: usize, need: usize },
}

/// Points of the scene cloud attributed to one object.
#[derive(Debug, Clone)]
pub struct TargetCloud {
    pub track_id: String,
    pub points: Vec<Vec3>,
    pub source_frame: usize,
    /// Dominant-cluster size over mask-projected candidate count.
    pub inlier_fraction: f64,
    /// Clustering radius actually used (the auto value when not configured).
    pub eps: f64,
}

/// Indices of points whose rounded projected pixel is mask foreground.
///
/// Rounding is half-up (`f64::round`), so a projection exactly on a pixel
/// boundary counts as the higher pixel.
pub fn points_in_mask(
    cloud: &SceneCloud,
    cam: &CameraFrame,
    mask: &BinaryMask,
) -> Result<Vec<usize>, ExtractError> {
    if mask.width != cam.width || mask.height != cam.height {
        return Err(ExtractError::ResolutionMismatch {
            mask_w: mask.width,
            mask_h: mask.height,
            cam_w: cam.width,
            cam_h: cam.height,
        });
    }
    let mut hits = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some(px) = cam.project(p) {
            let u = px.u.round();
            let v = px.v.round();
            if u >= 0.0 && v >= 0.0 && (u as u32) < mask.width && (v as u32) < mask.height {
                if mask.get(u as u32, v as u32) {
                    hits.push(i);
                }
            }
        }
    }
    Ok(hits)
}

/// Density clustering. `labels[i] = Some(cluster)` or `None` for noise.
///
/// A core point has at least `min_pts` neighbors within `eps` counting
/// itself; clusters are connected components of core points plus their
/// border points. Cluster ids are assigned in first-discovery order of the
/// input, so labels are deterministic for a given point order.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0, "eps must be positive");
    let n = points.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    if n == 0 {
        return labels;
    }
    let tree = KdTree::build(points);
    let neighborhoods: Vec<Vec<usize>> =
        points.iter().map(|p| tree.within(p, eps)).collect();
    let mut visited = vec![false; n];
    let mut next_cluster = 0usize;
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        if neighborhoods[start].len() < min_pts {
            continue; // noise unless later claimed as a border point
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[start] = Some(cluster);
        let mut queue: std::collections::VecDeque<usize> =
            neighborhoods[start].iter().copied().collect();
        while let Some(i) = queue.pop_front() {
            if labels[i].is_none() {
                labels[i] = Some(cluster);
            }
            if visited[i] {
                continue;
            }
            visited[i] = true;
            if neighborhoods[i].len() >= min_pts {
                queue.extend(neighborhoods[i].iter().copied());
            }
        }
    }
    labels
}

/// Straightforward quadratic reference for validating [`dbscan`].
pub fn dbscan_quadratic(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0, "eps must be positive");
    let n = points.len();
    let eps2 = eps * eps;
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n).filter(|&j| (points[i] - points[j]).norm_squared() <= eps2).collect()
        })
        .collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_cluster = 0usize;
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        if neighborhoods[start].len() < min_pts {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[start] = Some(cluster);
        let mut queue: std::collections::VecDeque<usize> =
            neighborhoods[start].iter().copied().collect();
        while let Some(i) = queue.pop_front() {
            if labels[i].is_none() {
                labels[i] = Some(cluster);
            }
            if visited[i] {
                continue;
            }
            visited[i] = true;
            if neighborhoods[i].len() >= min_pts {
                queue.extend(neighborhoods[i].iter().copied());
            }
        }
    }
    labels
}

/// Two labelings describe the same partition up to cluster renaming.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = std::collections::BTreeMap::new();
    let mut bwd = std::collections::BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(cx), Some(cy)) => {
                if *fwd.entry(cx).or_insert(cy) != cy || *bwd.entry(cy).or_insert(cx) != cx {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Median nearest-neighbor spacing scaled by 2.5, the automatic `eps`.
pub fn auto_eps(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let tree = KdTree::build(points);
    let mut dists: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // Nearest other point: query the two closest, skip self.
            let mut best = f64::INFINITY;
            for (j, d2) in tree.k_nearest(p, 2) {
                if j != i {
                    best = best.min(d2);
                }
            }
            best.sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if median > 0.0 {
        Some(2.5 * median)
    } else {
        None
    }
}

/// Full extraction chain for one object view.
pub fn extract_target(
    cloud: &SceneCloud,
    cam: &CameraFrame,
    mask: &BinaryMask,
    track_id: &str,
    config: &ExtractionConfig,
) -> Result<TargetCloud, ExtractError> {
    let candidates = points_in_mask(cloud, cam, mask)?;
    if candidates.is_empty() {
        return Err(ExtractError::NoCandidates);
    }
    let gated = depth_gate(cloud, cam, &candidates, config.depth_gate);
    let gated_points: Vec<Vec3> = gated.iter().map(|&i| cloud.points[i]).collect();
    let eps = match config.eps {
        Some(e) => e,
        None => auto_eps(&gated_points).ok_or(ExtractError::NoCandidates)?,
    };
    let labels = dbscan(&gated_points, eps, config.min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    if n_clusters == 0 {
        return Err(ExtractError::ClusterTooSmall { got: 0, need: config.min_target_points });
    }
    // Dominant cluster: most points, ties to the one nearer the camera.
    let mut best: Option<(usize, usize, f64)> = None; // (cluster, count, mean depth)
    for c in 0..n_clusters {
        let members: Vec<usize> =
            (0..gated_points.len()).filter(|&i| labels[i] == Some(c)).collect();
        let count = members.len();
        let mean_depth = members
            .iter()
            .map(|&i| cam.world_to_camera(&gated_points[i]).z)
            .sum::<f64>()
            / count as f64;
        let better = match best {
            None => true,
            Some((_, bc, bd)) => count > bc || (count == bc && mean_depth < bd),
        };
        if better {
            best = Some((c, count, mean_depth));
        }
    }
    let (cluster, count, _) = best.unwrap();
    if count < config.min_target_points {
        return Err(ExtractError::ClusterTooSmall { got: count, need: config.min_target_points });
    }
    let points: Vec<Vec3> = (0..gated_points.len())
        .filter(|&i| labels[i] == Some(cluster))
        .map(|i| gated_points[i])
        .collect();
    let inlier_fraction = points.len() as f64 / candidates.len() as f64;
    Ok(TargetCloud {
        track_id: track_id.to_string(),
        points,
        source_frame: cam.frame_index,
        inlier_fraction,
        eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameTag, Mat3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn test_camera() -> CameraFrame {
        CameraFrame {
            frame_index: 3,
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    fn rect_mask(x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        let mut m = BinaryMask::new(640, 480);
        for y in y0..=y1 {
            for x in x0..=x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn mask_projection_matches_per_point_oracle() {
        let cam = test_camera();
        let mask = rect_mask(300, 220, 340, 260);
        let mut points = Vec::new();
        for i in -20..=20 {
            for j in -20..=20 {
                points.push(Vec3::new(i as f64 * 0.02, j as f64 * 0.02, 4.0));
            }
        }
        points.push(Vec3::new(0.0, 0.0, -4.0));
        let cloud = SceneCloud::new(points.clone(), None, FrameTag::Metric);
        let got = points_in_mask(&cloud, &cam, &mask).unwrap();
        let expected: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                cam.project(p).is_some_and(|px| {
                    let (u, v) = (px.u.round(), px.v.round());
                    u >= 300.0 && u <= 340.0 && v >= 220.0 && v <= 260.0
                })
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, expected);
        assert!(!got.is_empty());
    }

    #[test]
    fn half_pixel_rounds_up() {
        let cam = test_camera();
        // u = 500 * x / z + 320 = 320.5 at x/z = 0.001; rounds to 321.
        let cloud = SceneCloud::new(vec![Vec3::new(0.001, 0.0, 1.0)], None, FrameTag::Metric);
        let mut only_321 = BinaryMask::new(640, 480);
        only_321.set(321, 240, true);
        assert_eq!(points_in_mask(&cloud, &cam, &only_321).unwrap(), vec![0]);
        let mut only_320 = BinaryMask::new(640, 480);
        only_320.set(320, 240, true);
        assert!(points_in_mask(&cloud, &cam, &only_320).unwrap().is_empty());
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let cam = test_camera();
        let cloud = SceneCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)], None, FrameTag::Metric);
        let mask = BinaryMask::new(64, 48);
        assert!(matches!(
            points_in_mask(&cloud, &cam, &mask),
            Err(ExtractError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn depth_gate_removes_far_leakage() {
        let cam = test_camera();
        let mut points: Vec<Vec3> = (0..100).map(|_| Vec3::new(0.0, 0.0, 2.0)).collect();
        points.extend((0..3).map(|_| Vec3::new(0.0, 0.0, 20.0)));
        let cloud = SceneCloud::new(points, None, FrameTag::Metric);
        let idx: Vec<usize> = (0..103).collect();
        let kept = depth_gate(&cloud, &cam, &idx, [0.05, 0.95]);
        assert_eq!(kept, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn single_blob_is_one_cluster() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let points: Vec<Vec3> = (0..100)
            .map(|_| {
                Vec3::new(rng.gen::<f64>() * 0.1, rng.gen::<f64>() * 0.1, rng.gen::<f64>() * 0.1)
            })
            .collect();
        let labels = dbscan(&points, 1.0, 10);
        assert!(labels.iter().all(|&l| l == Some(0)));
    }

    #[test]
    fn separated_blobs_are_two_clusters() {
        let mut points = Vec::new();
        for i in 0..30 {
            points.push(Vec3::new(i as f64 * 0.01, 0.0, 0.0));
        }
        for i in 0..30 {
            points.push(Vec3::new(100.0 + i as f64 * 0.01, 0.0, 0.0));
        }
        let labels = dbscan(&points, 0.05, 5);
        assert!(labels[..30].iter().all(|&l| l == Some(0)));
        assert!(labels[30..].iter().all(|&l| l == Some(1)));
    }

    #[test]
    fn matches_quadratic_reference_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..25 {
            let n = rng.gen_range(1..=200);
            let points: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen::<f64>() * 2.0,
                        rng.gen::<f64>() * 2.0,
                        rng.gen::<f64>() * 2.0,
                    )
                })
                .collect();
            let eps = rng.gen_range(0.05..0.5);
            let min_pts = rng.gen_range(1..8);
            let fast = dbscan(&points, eps, min_pts);
            let slow = dbscan_quadratic(&points, eps, min_pts);
            assert!(same_partition(&fast, &slow), "n={n} eps={eps} min_pts={min_pts}");
        }
    }

    #[test]
    fn noise_points_have_sparse_neighborhoods() {
        let mut points: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.001, 0.0, 0.0)).collect();
        points.push(Vec3::new(50.0, 0.0, 0.0));
        let labels = dbscan(&points, 0.01, 5);
        assert_eq!(labels[50], None);
        assert!(labels[..50].iter().all(|l| l.is_some()));
    }

    #[test]
    fn auto_eps_is_scaled_median_spacing() {
        // Spacings between nearest neighbors are all exactly 0.1.
        let points: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        assert!((auto_eps(&points).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(auto_eps(&points[..1]), None);
        assert_eq!(auto_eps(&[Vec3::zeros(), Vec3::zeros()]), None);
    }

    fn extraction_config() -> ExtractionConfig {
        let mut c = ExtractionConfig::default();
        c.min_target_points = 50;
        c
    }

    #[test]
    fn extracts_near_surface_and_rejects_far_wall() {
        let cam = test_camera();
        let mask = rect_mask(280, 200, 360, 280);
        // Near object: dense plate at depth 2. Far wall leaks into the same
        // mask at depth 6 with fewer points.
        let mut points = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                points.push(Vec3::new(
                    -0.1 + 0.02 * i as f64,
                    -0.1 + 0.02 * j as f64,
                    2.0,
                ));
            }
        }
        let wall_start = points.len();
        for i in 0..5 {
            for j in 0..5 {
                points.push(Vec3::new(-0.2 + 0.1 * i as f64, -0.2 + 0.1 * j as f64, 6.0));
            }
        }
        let cloud = SceneCloud::new(points.clone(), None, FrameTag::Metric);
        let target = extract_target(&cloud, &cam, &mask, "plate", &extraction_config()).unwrap();
        assert_eq!(target.track_id, "plate");
        assert_eq!(target.source_frame, 3);
        assert_eq!(target.points.len(), 144);
        assert!(target.points.iter().all(|p| p.z < 3.0), "wall points must be rejected");
        assert!(target.inlier_fraction > 0.8);
        let _ = wall_start;
    }

    #[test]
    fn empty_mask_region_fails_extraction() {
        let cam = test_camera();
        let mask = rect_mask(0, 0, 10, 10);
        let cloud = SceneCloud::new(vec![Vec3::new(0.0, 0.0, 2.0)], None, FrameTag::Metric);
        assert!(matches!(
            extract_target(&cloud, &cam, &mask, "x", &extraction_config()),
            Err(ExtractError::NoCandidates)
        ));
    }

    #[test]
    fn small_cluster_fails_extraction() {
        let cam = test_camera();
        let mask = rect_mask(310, 230, 330, 250);
        let points: Vec<Vec3> = (0..20).map(|i| Vec3::new(0.0, 0.0, 2.0 + i as f64 * 1e-4)).collect();
        let cloud = SceneCloud::new(points, None, FrameTag::Metric);
        let mut config = extraction_config();
        config.min_target_points = 100;
        config.eps = Some(0.01);
        config.depth_gate = [0.0, 1.0];
        assert!(matches!(
            extract_target(&cloud, &cam, &mask, "x", &config),
            Err(ExtractError::ClusterTooSmall { got: 20, need: 100 })
        ));
    }

    #[test]
    fn target_is_subset_of_mask_candidates() {
        let cam = test_camera();
        let mask = rect_mask(250, 180, 390, 300);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec3> = (0..400)
            .map(|_| {
                Vec3::new(
                    rng.gen::<f64>() * 0.5 - 0.25,
                    rng.gen::<f64>() * 0.5 - 0.25,
                    2.0 + rng.gen::<f64>() * 0.2,
                )
            })
            .collect();
        let cloud = SceneCloud::new(points.clone(), None, FrameTag::Metric);
        let candidates = points_in_mask(&cloud, &cam, &mask).unwrap();
        let candidate_set: std::collections::BTreeSet<_> =
            candidates.iter().map(|&i| format!("{:?}", points[i])).collect();
        let target = extract_target(&cloud, &cam, &mask, "x", &extraction_config()).unwrap();
        for p in &target.points {
            assert!(candidate_set.contains(&format!("{p:?}")));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Growing the mask can only grow the candidate set.
        #[test]
        fn mask_growth_is_monotone(seed in 0u64..1000) {
            let cam = test_camera();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<Vec3> = (0..200)
                .map(|_| Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, 1.0 + rng.gen::<f64>()))
                .collect();
            let cloud = SceneCloud::new(points, None, FrameTag::Metric);
            let small = rect_mask(300, 220, 340, 260);
            let big = rect_mask(280, 200, 360, 280);
            let a = points_in_mask(&cloud, &cam, &small).unwrap();
            let b = points_in_mask(&cloud, &cam, &big).unwrap();
            let bs: std::collections::BTreeSet<_> = b.into_iter().collect();
            prop_assert!(a.iter().all(|i| bs.contains(i)));
        }

        /// Every point gets exactly one label; noise points are never core.
        #[test]
        fn dbscan_labels_partition(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(5..80);
            let points: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), 0.0))
                .collect();
            let eps = 0.15;
            let min_pts = 4;
            let labels = dbscan(&points, eps, min_pts);
            prop_assert_eq!(labels.len(), points.len());
            for (i, l) in labels.iter().enumerate() {
                if l.is_none() {
                    let neighbors = points
                        .iter()
                        .filter(|q| (points[i] - **q).norm() <= eps)
                        .count();
                    prop_assert!(neighbors < min_pts, "noise point {} is core", i);
                }
            }
        }
    }
}
