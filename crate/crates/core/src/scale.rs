//! Metric scale recovery from a physical anchor object.
//!
//! A reconstruction from uncalibrated views is metric only up to one global
//! factor. One scene object with known physical width and depth (the anchor)
//! pins that factor: the ratio of its physical horizontal diagonal to its
//! extent in reconstruction units is the metric scale.

use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::geometry::{robust_aabb, CameraFrame, FrameTag, GeometryError, SceneCloud, Vec3};
use crate::io::config::{ExtentMode, ScaleConfig};
use crate::io::records::{AnchorSpec, ScaleRecord};
use crate::io::{IoError, ScenePackage};

/// Environment variable that overrides any configured anchor endpoint.
pub const ANCHOR_ENDPOINT_ENV: &str = "SCENEFUSE_ANCHOR_ENDPOINT";

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("no anchor source: package has no anchor.json and no endpoint is configured")]
    NoAnchorSource,
    #[error("anchor service: {0}")]
    Service(String),
    #[error("anchor frame {0} has no camera")]
    MissingFrame(usize),
    #[error("only {got} cloud points project into the anchor box, need {need}")]
    TooFewAnchorPoints { got: usize, need: usize },
    #[error("anchor extent {0} in reconstruction units is too small to divide by")]
    DegenerateExtent(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Where the anchor's physical dimensions come from.
pub enum AnchorProvider {
    /// `anchor.json` shipped inside the package.
    File(AnchorSpec),
    /// Remote service: one POST of the package preview image (empty body if
    /// the package has none), response parsed as the anchor schema.
    Endpoint { url: String, timeout: Duration, retries: u32 },
}

impl AnchorProvider {
    /// Endpoint wins over the packaged file; the environment variable
    /// [`ANCHOR_ENDPOINT_ENV`] wins over the configured endpoint.
    pub fn resolve(package: &ScenePackage, config: &ScaleConfig) -> Result<Self, ScaleError> {
        let env_url = std::env::var(ANCHOR_ENDPOINT_ENV).ok().filter(|s| !s.is_empty());
        let url = env_url.or_else(|| config.anchor_endpoint.clone());
        if let Some(url) = url {
            return Ok(AnchorProvider::Endpoint {
                url,
                timeout: Duration::from_secs_f64(config.http_timeout_s),
                retries: config.http_retries,
            });
        }
        match &package.anchor {
            Some(spec) => Ok(AnchorProvider::File(spec.clone())),
            None => Err(ScaleError::NoAnchorSource),
        }
    }

    pub fn fetch(&self, package_root: &Path) -> Result<AnchorSpec, ScaleError> {
        match self {
            AnchorProvider::File(spec) => Ok(spec.clone()),
            AnchorProvider::Endpoint { url, timeout, retries } => {
                let body = std::fs::read(package_root.join("preview.pgm")).unwrap_or_default();
                fetch_remote(url, &body, *timeout, *retries)
            }
        }
    }
}

fn fetch_remote(
    url: &str,
    body: &[u8],
    timeout: Duration,
    retries: u32,
) -> Result<AnchorSpec, ScaleError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .into();
    let mut last_err = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            // Exponential backoff: 100 ms, 200 ms, 400 ms, ...
            std::thread::sleep(Duration::from_millis(100 << (attempt - 1)));
        }
        let sent = agent
            .post(url)
            .content_type("application/octet-stream")
            .send(body)
            .map_err(|e| e.to_string())
            .and_then(|resp| resp.into_body().read_to_string().map_err(|e| e.to_string()));
        match sent {
            Ok(text) => {
                let spec: AnchorSpec = serde_json::from_str(&text)
                    .map_err(|e| ScaleError::Service(format!("bad response body: {e}")))?;
                spec.validate().map_err(ScaleError::Io)?;
                return Ok(spec);
            }
            Err(e) => last_err = e,
        }
    }
    Err(ScaleError::Service(format!(
        "{url} failed after {} attempts: {last_err}",
        retries + 1
    )))
}

/// Indices of cloud points that project inside `bbox` (pixel-inclusive) of
/// the given frame with positive depth.
pub fn points_in_bbox(cloud: &SceneCloud, camera: &CameraFrame, bbox: &[f64; 4]) -> Vec<usize> {
    let mut hits = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some(px) = camera.project(p) {
            if px.u >= bbox[0] && px.u <= bbox[2] && px.v >= bbox[1] && px.v <= bbox[3] {
                hits.push(i);
            }
        }
    }
    hits
}

/// Keeps points whose depth lies inside the [lo, hi] quantile band.
///
/// Quantiles use linear interpolation between order statistics, so the gate
/// is exact on small hand-built sets.
pub fn depth_gate(
    cloud: &SceneCloud,
    camera: &CameraFrame,
    indices: &[usize],
    gate: [f64; 2],
) -> Vec<usize> {
    let depths: Vec<f64> = indices
        .iter()
        .map(|&i| camera.world_to_camera(&cloud.points[i]).z)
        .collect();
    let mut sorted = depths.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return Vec::new();
    }
    let lo = quantile(&sorted, gate[0]);
    let hi = quantile(&sorted, gate[1]);
    indices
        .iter()
        .zip(&depths)
        .filter(|&(_, &d)| d >= lo && d <= hi)
        .map(|(&i, _)| i)
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Anchor extent in reconstruction units.
///
/// `GlobalMax` takes the largest axis of the trimmed world AABB.
/// `HorizontalOnly` first projects points onto the plane orthogonal to the
/// camera's down axis, then takes the larger of the two in-plane extents.
pub fn virtual_width(
    points: &[Vec3],
    camera: &CameraFrame,
    mode: ExtentMode,
    trim: f64,
) -> Result<f64, GeometryError> {
    match mode {
        ExtentMode::GlobalMax => Ok(robust_aabb(points, trim)?.max_extent()),
        ExtentMode::HorizontalOnly => {
            let down = camera.down_axis();
            // Camera right axis made orthogonal to down, then the third axis.
            let u = {
                let raw = camera.rotation.column(0).into_owned();
                let v = raw - down * raw.dot(&down);
                let n = v.norm();
                if n < 1e-12 {
                    return Err(GeometryError::Degenerate("camera right axis parallel to down".into()));
                }
                v / n
            };
            let w = down.cross(&u);
            let flat: Vec<Vec3> =
                points.iter().map(|p| Vec3::new(p.dot(&u), p.dot(&w), 0.0)).collect();
            let b = robust_aabb(&flat, trim)?;
            Ok(b.extent().x.max(b.extent().y))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScaleOutcome {
    pub record: ScaleRecord,
    pub anchor: AnchorSpec,
}

/// Full scale-recovery stage: cull to the anchor box, gate depths, measure
/// the trimmed extent, divide the physical diagonal by it.
pub fn compute_scale(
    package: &ScenePackage,
    config: &ScaleConfig,
) -> Result<ScaleOutcome, ScaleError> {
    let provider = AnchorProvider::resolve(package, config)?;
    let anchor = provider.fetch(&package.root)?;
    let camera = package
        .camera_by_frame(anchor.frame_index)
        .ok_or(ScaleError::MissingFrame(anchor.frame_index))?;

    let in_box = points_in_bbox(&package.cloud, camera, &anchor.bbox);
    let gated = depth_gate(&package.cloud, camera, &in_box, config.depth_gate);
    if gated.len() < config.min_anchor_points {
        return Err(ScaleError::TooFewAnchorPoints {
            got: gated.len(),
            need: config.min_anchor_points,
        });
    }
    let anchor_points: Vec<Vec3> = gated.iter().map(|&i| package.cloud.points[i]).collect();
    let w_virtual = virtual_width(&anchor_points, camera, config.extent_mode, config.trim)?;
    if w_virtual < 1e-9 {
        return Err(ScaleError::DegenerateExtent(w_virtual));
    }
    let diagonal = (anchor.width_m * anchor.width_m + anchor.depth_m * anchor.depth_m).sqrt();
    let scale = if config.disable_anchor_scale { 1.0 } else { diagonal / w_virtual };
    Ok(ScaleOutcome {
        record: ScaleRecord { scale, w_virtual, anchor_point_count: gated.len() },
        anchor,
    })
}

/// Applies the recovered scale: point coordinates and camera centers scale,
/// rotations and intrinsics do not, so every projection is preserved.
pub fn metricize(
    cloud: &SceneCloud,
    cameras: &[CameraFrame],
    scale: f64,
) -> (SceneCloud, Vec<CameraFrame>) {
    let points = cloud.points.iter().map(|p| p * scale).collect();
    let metric_cloud = SceneCloud::new(points, cloud.colors.clone(), FrameTag::Metric);
    let metric_cameras = cameras
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.translation *= scale;
            c
        })
        .collect();
    (metric_cloud, metric_cameras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use approx::assert_relative_eq;
    use std::io::{Read, Write as _};
    use std::net::TcpListener;

    fn test_camera() -> CameraFrame {
        CameraFrame {
            frame_index: 0,
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

    /// Dense axis-aligned slab whose largest trimmed extent is exactly 10.
    fn slab_points() -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            // Long axis spans [-5, 5] in x at two depths, giving extent 10.
            pts.push(Vec3::new(-5.0 + 10.0 * t, 0.0, 20.0));
            pts.push(Vec3::new(-5.0 + 10.0 * t, 0.5, 20.5));
        }
        pts
    }

    #[test]
    fn three_four_five_anchor_gives_half() {
        // Physical anchor 3 m wide, 4 m deep: diagonal 5 m. The virtual slab
        // extent is 10, so the scale must be exactly 0.5.
        let pts = slab_points();
        let cam = test_camera();
        let w = virtual_width(&pts, &cam, ExtentMode::GlobalMax, 0.0).unwrap();
        assert_eq!(w, 10.0);
        let s = (3.0f64 * 3.0 + 4.0 * 4.0).sqrt() / w;
        assert_eq!(s, 0.5);
    }

    #[test]
    fn compute_scale_end_to_end_three_four_five() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = SceneCloud::new(slab_points(), None, FrameTag::Dimensionless);
        let package = ScenePackage {
            root: dir.path().to_path_buf(),
            cloud,
            cameras: vec![test_camera()],
            masks: Default::default(),
            objects: Default::default(),
            anchor: Some(AnchorSpec {
                frame_index: 0,
                bbox: [0.0, 0.0, 640.0, 480.0],
                width_m: 3.0,
                depth_m: 4.0,
            }),
            config: Default::default(),
            warnings: Vec::new(),
        };
        let mut config = ScaleConfig::default();
        config.trim = 0.0;
        config.min_anchor_points = 50;
        config.depth_gate = [0.0, 1.0];
        let out = compute_scale(&package, &config).unwrap();
        assert_eq!(out.record.scale, 0.5);
        assert_eq!(out.record.anchor_point_count, 202);

        config.disable_anchor_scale = true;
        let out = compute_scale(&package, &config).unwrap();
        assert_eq!(out.record.scale, 1.0);
    }

    #[test]
    fn bbox_cull_is_inclusive_and_depth_aware() {
        let cam = test_camera();
        let cloud = SceneCloud::new(
            vec![
                Vec3::new(0.0, 0.0, 2.0),   // center pixel (320, 240)
                Vec3::new(0.4, -0.3, 2.0),  // (420, 165)
                Vec3::new(0.0, 0.0, -2.0),  // behind camera
                Vec3::new(10.0, 0.0, 2.0),  // off image
            ],
            None,
            FrameTag::Dimensionless,
        );
        let hits = points_in_bbox(&cloud, &cam, &[320.0, 165.0, 420.0, 240.0]);
        assert_eq!(hits, vec![0, 1]);
        let hits = points_in_bbox(&cloud, &cam, &[321.0, 165.0, 420.0, 240.0]);
        assert_eq!(hits, vec![1]);
    }

    #[test]
    fn depth_gate_drops_tails() {
        let cam = test_camera();
        // Eleven points at depths 1..=11: the [0.05, 0.95] band keeps
        // depths within [1.5, 10.5], dropping exactly the two extremes.
        let pts: Vec<Vec3> = (1..=11).map(|d| Vec3::new(0.0, 0.0, d as f64)).collect();
        let cloud = SceneCloud::new(pts, None, FrameTag::Dimensionless);
        let idx: Vec<usize> = (0..11).collect();
        let kept = depth_gate(&cloud, &cam, &idx, [0.05, 0.95]);
        assert_eq!(kept, (1..10).collect::<Vec<_>>());
    }

    #[test]
    fn horizontal_only_ignores_vertical_extent() {
        // Tall thin column: global max extent is vertical (4), horizontal
        // footprint is 1 x 0.5. With an identity camera, down is +y.
        let mut pts = Vec::new();
        for i in 0..=40 {
            let t = i as f64 / 40.0;
            pts.push(Vec3::new(t, 4.0 * t, 10.0));
            pts.push(Vec3::new(t, 4.0 * t, 10.5));
        }
        let cam = test_camera();
        let global = virtual_width(&pts, &cam, ExtentMode::GlobalMax, 0.0).unwrap();
        let horiz = virtual_width(&pts, &cam, ExtentMode::HorizontalOnly, 0.0).unwrap();
        assert_eq!(global, 4.0);
        assert_eq!(horiz, 1.0);
    }

    #[test]
    fn metricize_preserves_projections() {
        let cam = CameraFrame {
            rotation: crate::geometry::yaw_matrix(0.7),
            translation: Vec3::new(1.0, -2.0, 0.5),
            ..test_camera()
        };
        let cloud = SceneCloud::new(
            vec![Vec3::new(0.3, 0.1, 3.0), Vec3::new(-1.0, 0.4, 5.0)],
            None,
            FrameTag::Dimensionless,
        );
        let before: Vec<_> = cloud.points.iter().map(|p| cam.project(p).unwrap()).collect();
        let (mc, mcams) = metricize(&cloud, &[cam], 2.5);
        assert_eq!(mc.frame_tag, FrameTag::Metric);
        for (p, b) in mc.points.iter().zip(&before) {
            let a = mcams[0].project(p).unwrap();
            assert_relative_eq!(a.u, b.u, epsilon = 1e-9);
            assert_relative_eq!(a.v, b.v, epsilon = 1e-9);
            assert_relative_eq!(a.depth, b.depth * 2.5, epsilon = 1e-9);
        }
    }

    /// One-shot HTTP server used to fake the anchor service.
    fn mock_server(responses: Vec<String>) -> (String, std::thread::JoinHandle<Vec<usize>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut body_sizes = Vec::new();
            for response in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut tmp = [0u8; 1024];
                let header_end = loop {
                    let n = stream.read(&mut tmp).unwrap();
                    buf.extend_from_slice(&tmp[..n]);
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        break pos + 4;
                    }
                    if n == 0 {
                        break buf.len();
                    }
                };
                let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
                let content_length: usize = headers
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .map(|v| v.trim().parse().unwrap())
                    .unwrap_or(0);
                while buf.len() < header_end + content_length {
                    let n = stream.read(&mut tmp).unwrap();
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&tmp[..n]);
                }
                body_sizes.push(buf.len() - header_end);
                stream.write_all(response.as_bytes()).unwrap();
            }
            body_sizes
        });
        (format!("http://{addr}"), handle)
    }

    fn http_response(status: &str, body: &str) -> String {
        format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
    }

    const ANCHOR_JSON: &str =
        r#"{"frame_index":0,"bbox":[0.0,0.0,640.0,480.0],"width_m":3.0,"depth_m":4.0}"#;

    #[test]
    fn remote_anchor_success() {
        let (url, handle) = mock_server(vec![http_response("200 OK", ANCHOR_JSON)]);
        let spec = fetch_remote(&url, b"img", Duration::from_secs(5), 0).unwrap();
        assert_eq!(spec.width_m, 3.0);
        assert_eq!(handle.join().unwrap(), vec![3], "image bytes must be posted");
    }

    #[test]
    fn remote_anchor_retries_after_server_error() {
        let (url, handle) = mock_server(vec![
            http_response("500 Internal Server Error", "no"),
            http_response("200 OK", ANCHOR_JSON),
        ]);
        let spec = fetch_remote(&url, &[], Duration::from_secs(5), 2).unwrap();
        assert_eq!(spec.depth_m, 4.0);
        handle.join().unwrap();
    }

    #[test]
    fn remote_anchor_gives_up_after_retries() {
        let (url, handle) = mock_server(vec![
            http_response("500 Internal Server Error", "no"),
            http_response("500 Internal Server Error", "no"),
        ]);
        let err = fetch_remote(&url, &[], Duration::from_secs(5), 1).unwrap_err();
        assert!(matches!(err, ScaleError::Service(_)));
        assert!(err.to_string().contains("2 attempts"), "{err}");
        handle.join().unwrap();
    }

    #[test]
    fn remote_anchor_rejects_invalid_spec() {
        let bad = r#"{"frame_index":0,"bbox":[0.0,0.0,640.0,480.0],"width_m":-3.0,"depth_m":4.0}"#;
        let (url, handle) = mock_server(vec![http_response("200 OK", bad)]);
        let err = fetch_remote(&url, &[], Duration::from_secs(5), 0).unwrap_err();
        assert!(matches!(err, ScaleError::Io(_)), "{err}");
        handle.join().unwrap();
    }

    #[test]
    fn provider_resolution_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let package = ScenePackage {
            root: dir.path().to_path_buf(),
            cloud: SceneCloud::new(vec![Vec3::new(0.0, 0.0, 1.0)], None, FrameTag::Dimensionless),
            cameras: vec![test_camera()],
            masks: Default::default(),
            objects: Default::default(),
            anchor: None,
            config: Default::default(),
            warnings: Vec::new(),
        };
        let mut config = ScaleConfig::default();
        assert!(matches!(
            AnchorProvider::resolve(&package, &config),
            Err(ScaleError::NoAnchorSource)
        ));
        config.anchor_endpoint = Some("http://example.invalid/anchor".into());
        match AnchorProvider::resolve(&package, &config).unwrap() {
            AnchorProvider::Endpoint { url, .. } => {
                assert_eq!(url, "http://example.invalid/anchor");
            }
            _ => panic!("expected endpoint provider"),
        }
    }
}
