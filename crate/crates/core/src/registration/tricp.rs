//! Trimmed ICP constrained to floor-parallel motion.
//!
//! Each iteration matches every source point to its exact nearest target
//! point, keeps only the best fraction of pairs, and applies the
//! closed-form yaw + horizontal translation minimizing the kept residuals.
//! Trimming is what makes partial targets workable: correspondences on
//! unobserved mesh regions are discarded instead of dragging the fit.

use crate::geometry::{wrap_angle, yaw_matrix, Sim3Transform, Vec3};
use crate::spatial::KdTree;

use super::RegistrationError;

#[derive(Debug, Clone)]
pub struct TricpResult {
    /// Accumulated correction: unit scale, yaw-only rotation, and a
    /// translation with zero z unless vertical release was requested.
    pub transform: Sim3Transform,
    /// RMSE over the final trimmed correspondence set.
    pub rmse_m: f64,
    pub overlap_count: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Trimmed RMSE after each iteration, for monotonicity checks.
    pub rmse_trace: Vec<f64>,
}

/// Closed-form yaw about +z plus translation minimizing
/// sum ||R p + t - q||^2. Horizontal 2D Procrustes; the z translation is
/// the residual mean if `vertical` is set, otherwise zero.
pub fn planar_step(pairs: &[(Vec3, Vec3)], vertical: bool) -> (f64, Vec3) {
    let n = pairs.len() as f64;
    let cp: Vec3 = pairs.iter().map(|(p, _)| p).sum::<Vec3>() / n;
    let cq: Vec3 = pairs.iter().map(|(_, q)| q).sum::<Vec3>() / n;
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (p, q) in pairs {
        let (px, py) = (p.x - cp.x, p.y - cp.y);
        let (qx, qy) = (q.x - cq.x, q.y - cq.y);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
    }
    let theta = if dot == 0.0 && cross == 0.0 { 0.0 } else { cross.atan2(dot) };
    let r = yaw_matrix(theta);
    let mut t = cq - r * cp;
    if !vertical {
        t.z = 0.0;
    }
    (theta, t)
}

fn trimmed_pairs(
    source: &[Vec3],
    transform: &Sim3Transform,
    tree: &KdTree,
    target: &[Vec3],
    keep: usize,
) -> (Vec<(Vec3, Vec3)>, f64) {
    let mut matches: Vec<(f64, usize, usize)> = source
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let moved = transform.apply(p);
            let (j, d2) = tree.nearest(&moved).unwrap();
            (d2, i, j)
        })
        .collect();
    matches.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    matches.truncate(keep);
    let sse: f64 = matches.iter().map(|(d2, _, _)| d2).sum();
    let pairs = matches
        .iter()
        .map(|&(_, i, j)| (transform.apply(&source[i]), target[j]))
        .collect();
    (pairs, (sse / keep as f64).sqrt())
}

pub struct TricpParams {
    pub trim_ratio: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub vertical_release: bool,
}

pub fn tricp(
    source: &[Vec3],
    target: &[Vec3],
    params: &TricpParams,
    init: &Sim3Transform,
) -> Result<TricpResult, RegistrationError> {
    if source.len() < 10 || target.len() < 10 {
        return Err(RegistrationError::TooFewPoints {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if !(params.trim_ratio > 0.0 && params.trim_ratio <= 1.0) {
        return Err(RegistrationError::BadTrimRatio(params.trim_ratio));
    }
    let keep = ((params.trim_ratio * source.len() as f64).floor() as usize).max(3);
    let tree = KdTree::build(target);

    let mut transform = init.clone();
    let mut rmse_trace = Vec::new();
    let (mut pairs, mut rmse) = trimmed_pairs(source, &transform, &tree, target, keep);
    rmse_trace.push(rmse);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_iterations {
        iterations += 1;
        let (theta, t) = planar_step(&pairs, params.vertical_release);
        let step = Sim3Transform::new(1.0, yaw_matrix(theta), t).unwrap();
        let candidate = step.compose(&transform);
        let (new_pairs, new_rmse) = trimmed_pairs(source, &candidate, &tree, target, keep);
        if new_rmse > rmse + 1e-15 {
            // The closed-form step cannot worsen the objective on the fixed
            // pair set; a worse re-trimmed RMSE means we are at the floor of
            // what correspondence updates can do.
            converged = false;
            break;
        }
        let improvement = rmse - new_rmse;
        transform = candidate;
        pairs = new_pairs;
        rmse = new_rmse;
        rmse_trace.push(rmse);
        if improvement < params.tolerance {
            converged = true;
            break;
        }
    }
    Ok(TricpResult {
        transform,
        rmse_m: rmse,
        overlap_count: keep,
        iterations,
        converged,
        rmse_trace,
    })
}

/// Yaw difference between two planar transforms, wrapped to [-pi, pi).
pub fn yaw_error(a: &Sim3Transform, b: &Sim3Transform) -> f64 {
    wrap_angle(a.yaw() - b.yaw()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_params(trim: f64) -> TricpParams {
        TricpParams {
            trim_ratio: trim,
            max_iterations: 50,
            tolerance: 1e-6,
            vertical_release: false,
        }
    }

    /// Points on the surface of an axis-aligned box (all six faces).
    fn box_surface(ext: Vec3, n_per_axis: usize, center: Vec3) -> Vec<Vec3> {
        let mut pts = Vec::new();
        let h = ext / 2.0;
        for i in 0..n_per_axis {
            for j in 0..n_per_axis {
                let u = i as f64 / (n_per_axis - 1) as f64 - 0.5;
                let v = j as f64 / (n_per_axis - 1) as f64 - 0.5;
                pts.push(center + Vec3::new(h.x * 2.0 * u, h.y * 2.0 * v, -h.z));
                pts.push(center + Vec3::new(h.x * 2.0 * u, h.y * 2.0 * v, h.z));
                pts.push(center + Vec3::new(h.x * 2.0 * u, -h.y, h.z * 2.0 * v));
                pts.push(center + Vec3::new(h.x * 2.0 * u, h.y, h.z * 2.0 * v));
                pts.push(center + Vec3::new(-h.x, h.y * 2.0 * u, h.z * 2.0 * v));
                pts.push(center + Vec3::new(h.x, h.y * 2.0 * u, h.z * 2.0 * v));
            }
        }
        pts
    }

    #[test]
    fn identity_when_source_equals_target() {
        let pts = box_surface(Vec3::new(1.0, 0.6, 0.4), 12, Vec3::zeros());
        let r = tricp(&pts, &pts, &default_params(0.8), &Sim3Transform::identity()).unwrap();
        assert!(r.rmse_m < 1e-12);
        assert!(r.transform.yaw().abs() < 1e-12);
        assert!(r.transform.translation.norm() < 1e-12);
        assert!(r.converged);
    }

    /// Uniform random points inside an axis-aligned box. Feature-rich, so
    /// the correspondence field has a wide convergence basin.
    fn uniform_cloud(rng: &mut ChaCha8Rng, n: usize, lo: Vec3, hi: Vec3) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    lo.x + (hi.x - lo.x) * rng.gen::<f64>(),
                    lo.y + (hi.y - lo.y) * rng.gen::<f64>(),
                    lo.z + (hi.z - lo.z) * rng.gen::<f64>(),
                )
            })
            .collect()
    }

    /// Area-weighted random samples on a cuboid surface.
    fn box_random_surface(ext: Vec3, n: usize, seed: u64) -> Vec<Vec3> {
        let h = ext / 2.0;
        let areas = [
            ext.x * ext.y,
            ext.x * ext.y,
            ext.x * ext.z,
            ext.x * ext.z,
            ext.y * ext.z,
            ext.y * ext.z,
        ];
        let total: f64 = areas.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut pick = rng.gen::<f64>() * total;
                let mut face = 0;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u = 2.0 * rng.gen::<f64>() - 1.0;
                let v = 2.0 * rng.gen::<f64>() - 1.0;
                match face {
                    0 => Vec3::new(h.x * u, h.y * v, -h.z),
                    1 => Vec3::new(h.x * u, h.y * v, h.z),
                    2 => Vec3::new(h.x * u, -h.y, h.z * v),
                    3 => Vec3::new(h.x * u, h.y, h.z * v),
                    4 => Vec3::new(-h.x, h.y * u, h.z * v),
                    _ => Vec3::new(h.x, h.y * u, h.z * v),
                }
            })
            .collect()
    }

    #[test]
    fn recovers_rigid_planar_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = uniform_cloud(
            &mut rng,
            800,
            Vec3::new(-1.0, -0.3, -0.2),
            Vec3::new(1.0, 0.3, 0.2),
        );
        let truth = Sim3Transform::new(
            1.0,
            yaw_matrix(20f64.to_radians()),
            Vec3::new(0.10, -0.05, 0.0),
        )
        .unwrap();
        let dst = truth.apply_points(&src);
        let mut params = default_params(0.8);
        params.max_iterations = 200;
        params.tolerance = 1e-12;
        let r = tricp(&src, &dst, &params, &Sim3Transform::identity()).unwrap();
        assert!(yaw_error(&r.transform, &truth).to_degrees() < 0.1);
        assert!((r.transform.translation - truth.translation).norm() < 1e-3);
        assert_eq!(r.overlap_count, (0.8 * src.len() as f64).floor() as usize);
    }

    /// Partial-overlap instance: the full box is registered against points
    /// from two faces only (as a camera would see), with the trim carrying
    /// the load. Untrimmed ICP drags the 60% of points without true
    /// counterparts toward the visible faces and drifts off the answer.
    #[test]
    fn trimming_beats_full_icp_on_partial_target() {
        let src = box_random_surface(Vec3::new(1.0, 0.6, 0.5), 1400, 3);
        let truth = Sim3Transform::new(
            1.0,
            yaw_matrix(5f64.to_radians()),
            Vec3::new(0.05, -0.03, 0.0),
        )
        .unwrap();
        // Visible subset: -y face and +z face, roughly 40% of the surface.
        let visible: Vec<Vec3> = src
            .iter()
            .filter(|p| p.y < -0.29 || p.z > 0.24)
            .map(|p| truth.apply(p))
            .collect();
        let frac = visible.len() as f64 / src.len() as f64;
        assert!((0.3..0.5).contains(&frac), "visible fraction {frac}");

        let trimmed =
            tricp(&src, &visible, &default_params(0.4), &Sim3Transform::identity()).unwrap();
        let full =
            tricp(&src, &visible, &default_params(1.0), &Sim3Transform::identity()).unwrap();

        let trimmed_t = (trimmed.transform.translation - truth.translation).norm();
        let full_t = (full.transform.translation - truth.translation).norm();
        assert!(trimmed_t < 0.01, "trimmed translation error {trimmed_t}");
        assert!(yaw_error(&trimmed.transform, &truth).to_degrees() < 1.0);
        let trimmed_err = trimmed_t + yaw_error(&trimmed.transform, &truth);
        let full_err = full_t + yaw_error(&full.transform, &truth);
        assert!(
            trimmed_err < full_err,
            "trimmed {trimmed_err} should beat full {full_err}"
        );
    }

    /// Steeply rising rail: yaw and planar translation never move a point
    /// vertically, so nearest neighbors stay locked to the true partners
    /// even 45 degrees away, and the basin covers the whole worst case left
    /// by quarter-turn hypothesis snapping. Untrimmed ICP, fed the 60% of
    /// the rail that was never observed, lands far away.
    #[test]
    fn closes_half_right_angle_gap_on_steep_rail() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut params: Vec<f64> = (0..900).map(|_| rng.gen::<f64>()).collect();
        params.sort_by(f64::total_cmp);
        let rail: Vec<Vec3> = params
            .iter()
            .map(|&s| {
                let ang = std::f64::consts::FRAC_PI_2 * s;
                Vec3::new(0.45 * ang.cos(), 0.45 * ang.sin(), 1.5 * s)
            })
            .collect();
        for sign in [1.0, -1.0] {
            let truth = Sim3Transform::new(
                1.0,
                yaw_matrix(sign * 45f64.to_radians()),
                Vec3::new(0.30 * sign, -0.10, 0.0),
            )
            .unwrap();
            let visible: Vec<Vec3> = rail
                .iter()
                .zip(&params)
                .filter(|(_, s)| **s > 0.6)
                .map(|(p, _)| truth.apply(p))
                .collect();
            let mut long = default_params(0.4);
            long.max_iterations = 200;
            long.tolerance = 1e-12;
            let trimmed = tricp(&rail, &visible, &long, &Sim3Transform::identity()).unwrap();
            let mut full = long;
            full.trim_ratio = 1.0;
            let untrimmed = tricp(&rail, &visible, &full, &Sim3Transform::identity()).unwrap();

            let yaw_deg = yaw_error(&trimmed.transform, &truth).to_degrees();
            let t_err = (trimmed.transform.translation - truth.translation).norm();
            assert!(yaw_deg < 0.1, "trimmed yaw error {yaw_deg} deg");
            assert!(t_err < 1e-3, "trimmed translation error {t_err}");
            let full_yaw = yaw_error(&untrimmed.transform, &truth).to_degrees();
            let full_t = (untrimmed.transform.translation - truth.translation).norm();
            assert!(
                yaw_deg + t_err < full_yaw + full_t,
                "trimmed must beat untrimmed: {yaw_deg}+{t_err} vs {full_yaw}+{full_t}"
            );
        }
    }

    #[test]
    fn rmse_trace_is_monotone_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = box_surface(Vec3::new(0.8, 0.8, 0.3), 10, Vec3::zeros());
        let noisy: Vec<Vec3> = src
            .iter()
            .map(|p| {
                let t = Sim3Transform::new(1.0, yaw_matrix(0.4), Vec3::new(0.2, 0.1, 0.0)).unwrap();
                t.apply(p) + Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, 0.0) * 0.01
            })
            .collect();
        let r = tricp(&src, &noisy, &default_params(0.7), &Sim3Transform::identity()).unwrap();
        for w in r.rmse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "trace must not increase: {:?}", r.rmse_trace);
        }
    }

    #[test]
    fn result_stays_on_constraint_manifold() {
        let src = box_surface(Vec3::new(1.0, 0.4, 0.7), 10, Vec3::new(0.3, 0.3, 0.35));
        let truth = Sim3Transform::new(1.0, yaw_matrix(-0.7), Vec3::new(-0.2, 0.3, 0.0)).unwrap();
        let dst = truth.apply_points(&src);
        let r = tricp(&src, &dst, &default_params(0.6), &Sim3Transform::identity()).unwrap();
        assert_eq!(r.transform.scale, 1.0);
        assert_eq!(r.transform.translation.z, 0.0);
        // Rotation is exactly a yaw: the z row and column are unit z.
        let rz = r.transform.rotation * Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(rz, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
    }

    #[test]
    fn vertical_release_recovers_z_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = uniform_cloud(
            &mut rng,
            600,
            Vec3::new(-0.5, -0.3, -0.2),
            Vec3::new(0.5, 0.3, 0.2),
        );
        let truth_t = Vec3::new(0.05, -0.02, 0.12);
        let dst: Vec<Vec3> = src.iter().map(|p| yaw_matrix(0.1) * p + truth_t).collect();
        let mut params = default_params(0.9);
        params.vertical_release = true;
        let r = tricp(&src, &dst, &params, &Sim3Transform::identity()).unwrap();
        assert_relative_eq!(r.transform.translation.z, 0.12, epsilon = 1e-6);
        let mut locked = default_params(0.9);
        locked.vertical_release = false;
        let r2 = tricp(&src, &dst, &locked, &Sim3Transform::identity()).unwrap();
        assert_eq!(r2.transform.translation.z, 0.0);
    }

    #[test]
    fn closed_form_yaw_is_locally_optimal() {
        // Fixed correspondences; no +-0.1 degree perturbation of the solved
        // yaw may improve the objective.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pairs: Vec<(Vec3, Vec3)> = (0..60)
            .map(|_| {
                let p = Vec3::new(rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0, rng.gen::<f64>());
                let q = yaw_matrix(0.37) * p
                    + Vec3::new(0.2, -0.1, 0.0)
                    + Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), 0.0) * 0.02;
                (p, q)
            })
            .collect();
        let (theta, t) = planar_step(&pairs, false);
        let objective = |th: f64| {
            // Optimal translation for the perturbed yaw, so only the yaw
            // choice is being tested.
            let r = yaw_matrix(th);
            let n = pairs.len() as f64;
            let cp: Vec3 = pairs.iter().map(|(p, _)| p).sum::<Vec3>() / n;
            let cq: Vec3 = pairs.iter().map(|(_, q)| q).sum::<Vec3>() / n;
            let mut tt = cq - r * cp;
            tt.z = 0.0;
            pairs.iter().map(|(p, q)| (r * p + tt - q).norm_squared()).sum::<f64>()
        };
        let at_solution = objective(theta);
        let eps = 0.1f64.to_radians();
        assert!(objective(theta + eps) >= at_solution);
        assert!(objective(theta - eps) >= at_solution);
        let _ = t;
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let few = vec![Vec3::zeros(); 5];
        let many = box_surface(Vec3::new(1.0, 1.0, 1.0), 8, Vec3::zeros());
        assert!(matches!(
            tricp(&few, &many, &default_params(0.5), &Sim3Transform::identity()),
            Err(RegistrationError::TooFewPoints { .. })
        ));
        assert!(matches!(
            tricp(&many, &many, &default_params(0.0), &Sim3Transform::identity()),
            Err(RegistrationError::BadTrimRatio(_))
        ));
        assert!(matches!(
            tricp(&many, &many, &default_params(1.5), &Sim3Transform::identity()),
            Err(RegistrationError::BadTrimRatio(_))
        ));
    }
}
