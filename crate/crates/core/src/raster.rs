//! Deterministic triangle rasterization into camera frames.
//!
//! Produces binary coverage plus a nearest-depth buffer. Fill follows the
//! top-left rule with pixel centers at integer coordinates, so two
//! triangles sharing an edge never double-cover or leave a seam along it.
//! Triangles crossing the camera plane are clipped against z = 1e-6 before
//! projection.

use crate::geometry::{CameraFrame, Vec3};
use crate::grounding::BinaryMask;

pub const NEAR_CLIP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SilhouetteRaster {
    pub width: u32,
    pub height: u32,
    coverage: Vec<bool>,
    depth: Vec<f64>,
}

impl SilhouetteRaster {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, coverage: vec![false; n], depth: vec![f64::INFINITY; n] }
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.coverage[y as usize * self.width as usize + x as usize]
    }

    /// Depth at a pixel; +inf where uncovered.
    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.coverage.iter().any(|&c| c)
    }

    pub fn mask(&self) -> BinaryMask {
        let mut m = BinaryMask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.covered(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn cover(&mut self, x: u32, y: u32, depth: f64) {
        let i = y as usize * self.width as usize + x as usize;
        self.coverage[i] = true;
        if depth < self.depth[i] {
            self.depth[i] = depth;
        }
    }
}

/// Screen-space vertex: pixel position plus inverse camera depth.
#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    u: f64,
    v: f64,
    inv_z: f64,
}

fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u)
}

/// With the interior on the positive side of every edge: a top edge runs
/// right above the interior, a left edge runs upward.
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    (a.v == b.v && b.u > a.u) || b.v < a.v
}

/// Rasterizes posed mesh triangles into the camera's pixel grid.
pub fn rasterize_mesh(vertices: &[Vec3], faces: &[[u32; 3]], cam: &CameraFrame) -> SilhouetteRaster {
    let mut raster = SilhouetteRaster::new(cam.width, cam.height);
    let cam_space: Vec<Vec3> = vertices.iter().map(|p| cam.world_to_camera(p)).collect();
    let mut polygon = Vec::with_capacity(4);
    for f in faces {
        let tri = [
            cam_space[f[0] as usize],
            cam_space[f[1] as usize],
            cam_space[f[2] as usize],
        ];
        clip_near(&tri, &mut polygon);
        if polygon.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = polygon
            .iter()
            .map(|p| ScreenVertex {
                u: cam.fx * p.x / p.z + cam.cx,
                v: cam.fy * p.y / p.z + cam.cy,
                inv_z: 1.0 / p.z,
            })
            .collect();
        for i in 1..screen.len() - 1 {
            fill_triangle(&mut raster, &[screen[0], screen[i], screen[i + 1]]);
        }
    }
    raster
}

/// Visible part of raster `idx` in a multi-object scene: pixels where it is
/// strictly nearest across all rasters, with depth ties kept by the lowest
/// index. Resulting masks for distinct indices never overlap.
pub fn occlusion_owned(rasters: &[SilhouetteRaster], idx: usize) -> BinaryMask {
    let r = &rasters[idx];
    let mut mask = BinaryMask::new(r.width, r.height);
    for y in 0..r.height {
        for x in 0..r.width {
            if !r.covered(x, y) {
                continue;
            }
            let d = r.depth_at(x, y);
            let owned = rasters.iter().enumerate().all(|(j, other)| {
                if j == idx || !other.covered(x, y) {
                    return true;
                }
                let dj = other.depth_at(x, y);
                d < dj || (d == dj && idx < j)
            });
            if owned {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Clips a camera-space triangle against z = NEAR_CLIP (Sutherland-Hodgman).
fn clip_near(tri: &[Vec3; 3], out: &mut Vec<Vec3>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR_CLIP;
        let b_in = b.z >= NEAR_CLIP;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_CLIP - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
}

fn fill_triangle(raster: &mut SilhouetteRaster, tri: &[ScreenVertex; 3]) {
    let mut v = *tri;
    let area2 = edge(&v[0], &v[1], v[2].u, v[2].v);
    if area2 == 0.0 {
        return;
    }
    if area2 < 0.0 {
        v.swap(1, 2);
    }
    let area2 = area2.abs();
    let min_x = v.iter().map(|p| p.u).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_x = v.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max).floor() as i64;
    let min_y = v.iter().map(|p| p.v).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
    let max_y = v.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max).floor() as i64;
    let max_x = max_x.min(raster.width as i64 - 1);
    let max_y = max_y.min(raster.height as i64 - 1);
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let (px, py) = (x as f64, y as f64);
            let w0 = edge(&v[1], &v[2], px, py);
            let w1 = edge(&v[2], &v[0], px, py);
            let w2 = edge(&v[0], &v[1], px, py);
            let inside = (w0 > 0.0 || (w0 == 0.0 && is_top_left(&v[1], &v[2])))
                && (w1 > 0.0 || (w1 == 0.0 && is_top_left(&v[2], &v[0])))
                && (w2 > 0.0 || (w2 == 0.0 && is_top_left(&v[0], &v[1])));
            if inside {
                // 1/z is linear in screen space, so this is perspective
                // correct.
                let inv_z = (w0 * v[0].inv_z + w1 * v[1].inv_z + w2 * v[2].inv_z) / area2;
                raster.cover(x as u32, y as u32, 1.0 / inv_z);
            }
        }
    }
}
