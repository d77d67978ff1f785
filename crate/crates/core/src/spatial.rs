//! Exact nearest-neighbor queries over 3D point sets.
//!
//! A median-split kd-tree; queries return exactly the same answers as a
//! linear scan, which the clustering and registration contracts require.

use crate::geometry::Vec3;

pub struct KdTree {
    points: Vec<Vec3>,
    /// Indices into `points`, reordered so each node's subtree is contiguous.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

struct Node {
    axis: u8,
    split: f64,
    /// Range of `order` covered by this node; children at 2i+1 / 2i+2 when
    /// the range is larger than LEAF_SIZE.
    start: u32,
    end: u32,
}

const LEAF_SIZE: usize = 16;

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build_node(points, &mut order, &mut nodes, 0, 0, points.len());
        }
        Self { points: points.to_vec(), order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        let len = (n.end - n.start) as usize;
        if len <= LEAF_SIZE {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let d2 = (self.points[i as usize] - q).norm_squared();
                if d2 < best.1 || (d2 == best.1 && (i as usize) < best.0) {
                    *best = (i as usize, d2);
                }
            }
            return;
        }
        let delta = q[n.axis as usize] - n.split;
        let (near, far) = if delta <= 0.0 { (2 * node + 1, 2 * node + 2) } else { (2 * node + 2, 2 * node + 1) };
        self.nearest_rec(near, q, best);
        if delta * delta <= best.1 {
            self.nearest_rec(far, q, best);
        }
    }

    /// The `k` closest points to `q` as (index, squared distance), ordered
    /// by distance then index.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.k_nearest_rec(0, q, k, &mut best);
        }
        best
    }

    fn k_nearest_rec(&self, node: usize, q: &Vec3, k: usize, best: &mut Vec<(usize, f64)>) {
        let n = &self.nodes[node];
        let len = (n.end - n.start) as usize;
        if len <= LEAF_SIZE {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let d2 = (self.points[i as usize] - q).norm_squared();
                let pos = best.partition_point(|&(bi, bd)| (bd, bi) < (d2, i as usize));
                if pos < k {
                    best.insert(pos, (i as usize, d2));
                    best.truncate(k);
                }
            }
            return;
        }
        let delta = q[n.axis as usize] - n.split;
        let (near, far) = if delta <= 0.0 { (2 * node + 1, 2 * node + 2) } else { (2 * node + 2, 2 * node + 1) };
        self.k_nearest_rec(near, q, k, best);
        if best.len() < k || delta * delta <= best[best.len() - 1].1 {
            self.k_nearest_rec(far, q, k, best);
        }
    }

    /// Indices of all points within `radius` (inclusive) of `q`, ascending.
    pub fn within(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_rec(0, q, radius * radius, &mut out);
            out.sort_unstable();
        }
        out
    }

    fn within_rec(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        let len = (n.end - n.start) as usize;
        if len <= LEAF_SIZE {
            for &i in &self.order[n.start as usize..n.end as usize] {
                if (self.points[i as usize] - q).norm_squared() <= r2 {
                    out.push(i as usize);
                }
            }
            return;
        }
        let delta = q[n.axis as usize] - n.split;
        if delta <= 0.0 || delta * delta <= r2 {
            self.within_rec(2 * node + 1, q, r2, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.within_rec(2 * node + 2, q, r2, out);
        }
    }
}

fn build_node(points: &[Vec3], order: &mut [u32], nodes: &mut Vec<Node>, node: usize, start: usize, end: usize) {
    if nodes.len() <= node {
        nodes.resize_with(node + 1, || Node { axis: 0, split: 0.0, start: 0, end: 0 });
    }
    let slice = &mut order[start..end];
    let len = slice.len();
    if len <= LEAF_SIZE {
        nodes[node] = Node { axis: 0, split: 0.0, start: start as u32, end: end as u32 };
        return;
    }
    let mut min = points[slice[0] as usize];
    let mut max = min;
    for &i in slice.iter() {
        min = min.inf(&points[i as usize]);
        max = max.sup(&points[i as usize]);
    }
    let ext = max - min;
    let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
    let mid = len / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis]).then(a.cmp(&b))
    });
    let split = points[slice[mid] as usize][axis];
    nodes[node] = Node { axis: axis as u8, split, start: start as u32, end: end as u32 };
    build_node(points, order, nodes, 2 * node + 1, start, start + mid);
    build_node(points, order, nodes, 2 * node + 2, start + mid, end);
}
