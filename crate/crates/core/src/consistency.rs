//! Scene-level structural consistency.
//!
//! The largest registered object anchors the scene: every other yaw is
//! snapped to a quarter-turn multiple of the anchor's, and horizontal
//! footprint collisions are resolved by classifying each object against the
//! anchor (embedded vs freestanding) and displacing in the floor plane.
//! Nothing here ever touches scale or yaw-free rotation, and only ground
//! leveling moves anything vertically.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use crate::geometry::{wrap_angle, yaw_matrix, Vec3};
use crate::registration::{ObjectStatus, RegisteredObject};

/// Horizontal axis-aligned bounding rectangle of a posed mesh, expressed in
/// the frame yawed with the anchor so box tests stay tight after snapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub track_id: String,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Footprint {
    /// Rectangle around the xy of `points` seen in a frame rotated by
    /// `frame_yaw` about z (pass 0.0 for plain world axes).
    pub fn from_points(track_id: &str, points: &[Vec3], frame_yaw: f64) -> Footprint {
        let (c, s) = (frame_yaw.cos(), frame_yaw.sin());
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            // Rotate by -frame_yaw: world xy into the anchor-aligned frame.
            let x = c * p.x + s * p.y;
            let y = -s * p.x + c * p.y;
            min[0] = min[0].min(x);
            min[1] = min[1].min(y);
            max[0] = max[0].max(x);
            max[1] = max[1].max(y);
        }
        Footprint { track_id: track_id.to_string(), min, max }
    }

    pub fn area(&self) -> f64 {
        ((self.max[0] - self.min[0]) * (self.max[1] - self.min[1])).max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Footprint {
        Footprint {
            track_id: self.track_id.clone(),
            min: [self.min[0] + dx, self.min[1] + dy],
            max: [self.max[0] + dx, self.max[1] + dy],
        }
    }

    pub fn intersection_area(&self, other: &Footprint) -> f64 {
        let w = self.max[0].min(other.max[0]) - self.min[0].max(other.min[0]);
        let h = self.max[1].min(other.max[1]) - self.min[1].max(other.min[1]);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Intersection area over the smaller footprint's area, so a fully inset
/// object reads 1.0 no matter how large the anchor is.
pub fn overlap_ratio(a: &Footprint, b: &Footprint) -> f64 {
    let smaller = a.area().min(b.area());
    if smaller <= 0.0 {
        return 0.0;
    }
    (a.intersection_area(b) / smaller).clamp(0.0, 1.0)
}

/// Largest footprint wins; area ties go to the lexicographically smaller id.
pub fn select_anchor(footprints: &[Footprint]) -> Option<&str> {
    footprints
        .iter()
        .max_by(|a, b| {
            a.area()
                .total_cmp(&b.area())
                .then_with(|| b.track_id.cmp(&a.track_id))
        })
        .map(|f| f.track_id.as_str())
}

/// Nearest quarter-turn multiple of the anchor yaw: returns
/// `anchor_yaw + k * pi/2` where k minimizes the wrapped distance to
/// `object_yaw`, ties toward smaller |k|. Half-turn snaps use the -pi
/// representative (matching the wrap convention) so re-snapping a snapped
/// yaw is a bitwise fixpoint.
pub fn snap_yaw(object_yaw: f64, anchor_yaw: f64) -> f64 {
    let d = wrap_angle(object_yaw - anchor_yaw);
    // The optimum is one of the two bracketing multiples.
    let lo = (d / FRAC_PI_2).floor() as i32;
    let mut best = (f64::INFINITY, 0i32);
    for k in [lo, lo + 1] {
        let dist = wrap_angle(d - f64::from(k) * FRAC_PI_2).abs();
        if dist < best.0 || (dist == best.0 && k.abs() < best.1.abs()) {
            best = (dist, k);
        }
    }
    let k = if best.1 == 2 { -2 } else { best.1 };
    anchor_yaw + f64::from(k) * FRAC_PI_2
}

#[derive(Debug, Clone)]
pub struct RefineOptions {
    /// Anchor-overlap ratio above which an object counts as built into the
    /// anchor rather than standing next to it.
    pub embedded_threshold: f64,
    pub snap_enabled: bool,
    pub collision_enabled: bool,
    pub leveling_enabled: bool,
    /// Clearance added beyond the exact separating displacement.
    pub repulsion_margin: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            embedded_threshold: 0.30,
            snap_enabled: true,
            collision_enabled: true,
            leveling_enabled: true,
            repulsion_margin: 0.01,
        }
    }
}

impl RefineOptions {
    /// Everything off: refinement becomes the identity.
    pub fn disabled() -> Self {
        RefineOptions {
            snap_enabled: false,
            collision_enabled: false,
            leveling_enabled: false,
            ..RefineOptions::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    pub anchor: Option<String>,
    /// False when the pairwise relaxation hit its sweep cap with
    /// intersections left; poses are then best-effort.
    pub fixpoint: bool,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 20;

/// Least-motion flush displacement (anchor frame): slide along one axis so
/// the object's nearest edge lands on the matching anchor edge.
fn flush_displacement(obj: &Footprint, anchor: &Footprint) -> (f64, f64) {
    let candidates = [
        (anchor.min[0] - obj.min[0], 0),
        (anchor.max[0] - obj.max[0], 0),
        (anchor.min[1] - obj.min[1], 1),
        (anchor.max[1] - obj.max[1], 1),
    ];
    let &(d, axis) = candidates
        .iter()
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .unwrap();
    if axis == 0 {
        (d, 0.0)
    } else {
        (0.0, d)
    }
}

/// Displacement along `dir` (normalized) that just separates `obj` from
/// `fixed`, plus `margin`. Returns None when the rectangles are disjoint.
fn repulsion_displacement(
    obj: &Footprint,
    fixed: &Footprint,
    dir: [f64; 2],
    margin: f64,
) -> Option<(f64, f64)> {
    if obj.intersection_area(fixed) <= 0.0 {
        return None;
    }
    let mut lambda = f64::INFINITY;
    if dir[0] > 0.0 {
        lambda = lambda.min((fixed.max[0] - obj.min[0]) / dir[0]);
    } else if dir[0] < 0.0 {
        lambda = lambda.min((fixed.min[0] - obj.max[0]) / dir[0]);
    }
    if dir[1] > 0.0 {
        lambda = lambda.min((fixed.max[1] - obj.min[1]) / dir[1]);
    } else if dir[1] < 0.0 {
        lambda = lambda.min((fixed.min[1] - obj.max[1]) / dir[1]);
    }
    if !lambda.is_finite() {
        return None;
    }
    let step = lambda + margin;
    Some((dir[0] * step, dir[1] * step))
}

/// Direction from `from`'s footprint center toward `to`'s, with a fixed +x
/// fallback for coincident centers.
fn away_direction(from: &Footprint, to: &Footprint) -> [f64; 2] {
    let (fc, tc) = (from.center(), to.center());
    let (dx, dy) = (tc[0] - fc[0], tc[1] - fc[1]);
    let n = (dx * dx + dy * dy).sqrt();
    if n < 1e-12 {
        [1.0, 0.0]
    } else {
        [dx / n, dy / n]
    }
}

struct WorkItem {
    index: usize,
    footprint: Footprint,
    class: ObjectStatus,
    /// Accumulated anchor-frame horizontal displacement.
    shift: [f64; 2],
}

/// Snaps yaws to the anchor's quarter-turn grid, resolves footprint
/// collisions, and levels grounded objects, updating poses and statuses in
/// place. Only objects with a placed status participate.
pub fn refine_scene(
    objects: &mut [RegisteredObject],
    mesh_vertices: &BTreeMap<String, Vec<Vec3>>,
    cfg: &RefineOptions,
) -> RefineReport {
    let placed: Vec<usize> = (0..objects.len())
        .filter(|&i| objects[i].status.is_placed())
        .filter(|&i| mesh_vertices.contains_key(&objects[i].track_id))
        .collect();
    if placed.is_empty() {
        return RefineReport { anchor: None, fixpoint: true, sweeps: 0 };
    }

    // Anchor selection uses world-frame footprints: the anchor frame does
    // not exist yet.
    let world_fps: Vec<Footprint> = placed
        .iter()
        .map(|&i| {
            let o = &objects[i];
            Footprint::from_points(&o.track_id, &o.pose.apply_points(&mesh_vertices[&o.track_id]), 0.0)
        })
        .collect();
    let anchor_id = select_anchor(&world_fps).unwrap().to_string();
    let anchor_index = placed
        .iter()
        .copied()
        .find(|&i| objects[i].track_id == anchor_id)
        .unwrap();
    let anchor_yaw = objects[anchor_index].pose.yaw();

    if cfg.snap_enabled {
        for &i in &placed {
            if i == anchor_index {
                continue;
            }
            let snapped = snap_yaw(objects[i].pose.yaw(), anchor_yaw);
            let delta = snapped - objects[i].pose.yaw();
            // Pivot at the object origin: rotation changes, translation
            // stays, scale and z are untouched by construction.
            objects[i].pose.rotation = yaw_matrix(delta) * objects[i].pose.rotation;
        }
    }

    let mut report =
        RefineReport { anchor: Some(anchor_id.clone()), fixpoint: true, sweeps: 0 };

    // Classification against the anchor is decided from pre-adjustment
    // overlap ratios; displacements never re-classify.
    let mut items: Vec<WorkItem> = placed
        .iter()
        .map(|&i| {
            let o = &objects[i];
            let fp = Footprint::from_points(
                &o.track_id,
                &o.pose.apply_points(&mesh_vertices[&o.track_id]),
                anchor_yaw,
            );
            WorkItem { index: i, footprint: fp, class: ObjectStatus::Untouched, shift: [0.0, 0.0] }
        })
        .collect();
    let anchor_item = items.iter().position(|w| w.index == anchor_index).unwrap();
    let anchor_fp = items[anchor_item].footprint.clone();

    for w in items.iter_mut() {
        if w.index == anchor_index {
            continue;
        }
        let ratio = overlap_ratio(&w.footprint, &anchor_fp);
        w.class = if ratio > cfg.embedded_threshold {
            ObjectStatus::Embedded
        } else if ratio > 0.0 {
            ObjectStatus::Freestanding
        } else {
            ObjectStatus::Untouched
        };
    }

    if cfg.collision_enabled {
        // Stage one: settle every object against the anchor.
        for w in items.iter_mut() {
            match w.class {
                ObjectStatus::Embedded => {
                    let (dx, dy) = flush_displacement(&w.footprint, &anchor_fp);
                    w.footprint = w.footprint.translated(dx, dy);
                    w.shift = [w.shift[0] + dx, w.shift[1] + dy];
                }
                ObjectStatus::Freestanding => {
                    let dir = away_direction(&anchor_fp, &w.footprint);
                    if let Some((dx, dy)) =
                        repulsion_displacement(&w.footprint, &anchor_fp, dir, cfg.repulsion_margin)
                    {
                        w.footprint = w.footprint.translated(dx, dy);
                        w.shift = [w.shift[0] + dx, w.shift[1] + dy];
                    }
                }
                _ => {}
            }
        }

        // Stage two: pairwise relaxation among freestanding objects in
        // ascending footprint area; the smaller of a pair always moves.
        let mut order: Vec<usize> = (0..items.len())
            .filter(|&k| items[k].class == ObjectStatus::Freestanding)
            .collect();
        order.sort_by(|&a, &b| {
            items[a]
                .footprint
                .area()
                .total_cmp(&items[b].footprint.area())
                .then_with(|| items[a].footprint.track_id.cmp(&items[b].footprint.track_id))
        });
        loop {
            let mut moved = false;
            for oi in 0..order.len() {
                let k = order[oi];
                // Re-check the anchor first, then any larger freestanding
                // neighbor (later in the ascending order).
                let obstacles: Vec<Footprint> = std::iter::once(anchor_fp.clone())
                    .chain(order[oi + 1..].iter().map(|&j| items[j].footprint.clone()))
                    .collect();
                for ob in &obstacles {
                    if items[k].footprint.intersection_area(ob) <= 0.0 {
                        continue;
                    }
                    let dir = away_direction(ob, &items[k].footprint);
                    if let Some((dx, dy)) =
                        repulsion_displacement(&items[k].footprint, ob, dir, cfg.repulsion_margin)
                    {
                        items[k].footprint = items[k].footprint.translated(dx, dy);
                        items[k].shift = [items[k].shift[0] + dx, items[k].shift[1] + dy];
                        moved = true;
                    }
                }
            }
            if moved {
                report.sweeps += 1;
            }
            if !moved {
                break;
            }
            if report.sweeps >= MAX_SWEEPS {
                let clean = order.iter().all(|&k| {
                    items[k].footprint.intersection_area(&anchor_fp) <= 0.0
                        && order.iter().all(|&j| {
                            j == k
                                || items[k].footprint.intersection_area(&items[j].footprint)
                                    <= 0.0
                        })
                });
                if !clean {
                    report.fixpoint = false;
                }
                break;
            }
        }
    }

    // Write back: rotate accumulated anchor-frame shifts into world xy.
    let (c, s) = (anchor_yaw.cos(), anchor_yaw.sin());
    for w in &items {
        let o = &mut objects[w.index];
        o.pose.translation.x += c * w.shift[0] - s * w.shift[1];
        o.pose.translation.y += s * w.shift[0] + c * w.shift[1];
        if w.index != anchor_index {
            o.status = w.class;
        }
    }

    if cfg.leveling_enabled {
        // Anything standing clear of the anchor rests on the floor; the
        // anchor itself always does. Embedded objects keep their height.
        for w in &items {
            let clear = w.index == anchor_index
                || w.footprint.intersection_area(&anchor_fp) <= 0.0;
            if !clear {
                continue;
            }
            let o = &mut objects[w.index];
            let min_z = o
                .pose
                .apply_points(&mesh_vertices[&o.track_id])
                .iter()
                .map(|p| p.z)
                .fold(f64::INFINITY, f64::min);
            o.pose.translation.z -= min_z;
        }
    }

    report
}
