#[test]
fn probe_pipeline_dropout() {
    use scenefuse::pipeline::Runner;
    use scenefuse::synth::{generate_scene, kitchen_spec, NoiseSpec};
    let noise = NoiseSpec { sigma_m: 0.0, outlier_fraction: 0.0, mask_erosion_px: 0 };
    let spec = kitchen_spec(21, 12, 1.6, noise, false);
    let (package, _truth) = generate_scene(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut runner = Runner::new(package, dir.path(), Some(2)).unwrap();
    let scale = runner.run_scale().unwrap();
    eprintln!("scale = {:?}", scale);
    let views = runner.run_ground().unwrap();
    eprintln!("views = {:?}", views.views);
    eprintln!("dropped = {:?}, unviewable = {:?}", views.dropped, views.unviewable);
    let extraction = runner.run_extract().unwrap();
    for t in &extraction.targets {
        eprintln!("extract {} -> {} (pts {}, frac {:?})", t.track_id, t.status, t.point_count, t.inlier_fraction);
    }
    let reg = runner.run_register().unwrap();
    for r in &reg {
        eprintln!("register {} -> {} rmse {:?}", r.track_id, r.status, r.rmse_m);
    }
    let report = runner.run_eval().unwrap();
    for r in &report.objects {
        eprintln!("eval {} -> {} iou {:?} scale {:?}", r.track_id, r.status, r.nvss_iou, r.object_scale);
    }
    eprintln!("miou = {:?}", report.miou);
}
