use scenefuse::extraction::{auto_eps, dbscan, points_in_mask};
use scenefuse::scale::{compute_scale, depth_gate, metricize};
use scenefuse::synth::{generate_scene, kitchen_spec, NoiseSpec};

#[test]
fn probe_extract_detail() {
    let noise = NoiseSpec { sigma_m: 0.0, outlier_fraction: 0.0, mask_erosion_px: 0 };
    let spec = kitchen_spec(21, 12, 1.6, noise, false);
    let (package, _truth) = generate_scene(&spec).unwrap();
    eprintln!("cloud total points: {}", package.cloud.points.len());
    let scale = compute_scale(&package, &package.config.scale).unwrap().record.scale;
    eprintln!("scale: {scale}");
    let (cloud, cameras) = metricize(&package.cloud, &package.cameras, scale);
    let cfg = &package.config.extraction;
    eprintln!("extraction config: {:?}", cfg);
    for (track, frame) in [("obj_02_stool", 4usize), ("obj_06_bench", 7), ("counter_00", 0)] {
        let cam = cameras.iter().find(|c| c.frame_index == frame).unwrap();
        let mask = &package.masks.tracks[track][&frame];
        let mask_px = (0..mask.height).flat_map(|y| (0..mask.width).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.get(x, y)).count();
        let candidates = points_in_mask(&cloud, cam, mask).unwrap();
        let gated = depth_gate(&cloud, cam, &candidates, cfg.depth_gate);
        let pts: Vec<_> = gated.iter().map(|&i| cloud.points[i]).collect();
        let eps = auto_eps(&pts).unwrap();
        let labels = dbscan(&pts, eps, cfg.min_pts);
        let n_clusters = labels.iter().flatten().max().map_or(0, |&m| m + 1);
        let mut sizes: Vec<usize> = (0..n_clusters)
            .map(|c| labels.iter().filter(|&&l| l == Some(c)).count())
            .collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let noise_ct = labels.iter().filter(|l| l.is_none()).count();
        eprintln!("{track}: mask_px {mask_px}, candidates {}, gated {}, eps {:.4}, clusters {n_clusters}, top sizes {:?}, noise {noise_ct}",
            candidates.len(), gated.len(), eps, &sizes[..sizes.len().min(8)]);
    }
}
