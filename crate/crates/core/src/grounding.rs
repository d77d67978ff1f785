//! Binary instance masks and view selection.
//!
//! Tracked masks arrive per object and per frame. This module consolidates
//! overlapping detections, drops unstable tracklets, and picks each object's
//! canonical observation frame: the view with the largest un-truncated
//! visible area, which later stages use for target extraction and scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("mask resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(u32, u32, u32, u32),
    #[error("operation undefined on empty masks")]
    EmptyMask,
    #[error("track {0} has no view with positive score")]
    NoValidView(String),
}

/// Dense binary raster; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; (width * height) as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), (width * height) as usize, "bit count must match dimensions");
        Self { width, height, bits }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    fn same_shape(&self, other: &Self) -> Result<(), GroundingError> {
        if self.width != other.width || self.height != other.height {
            return Err(GroundingError::ResolutionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &Self) -> Result<(), GroundingError> {
        self.same_shape(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// Tight foreground bounding box `(x_min, y_min, x_max, y_max)`, inclusive.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out = Some(match out {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        out
    }

    /// Morphological erosion with the 4-neighborhood, `iterations` times.
    /// Pixels outside the image count as background.
    pub fn eroded(&self, iterations: u32) -> Self {
        let mut cur = self.clone();
        for _ in 0..iterations {
            let mut next = BinaryMask::new(self.width, self.height);
            for y in 0..self.height {
                for x in 0..self.width {
                    if cur.get(x, y)
                        && x > 0
                        && y > 0
                        && x + 1 < self.width
                        && y + 1 < self.height
                        && cur.get(x - 1, y)
                        && cur.get(x + 1, y)
                        && cur.get(x, y - 1)
                        && cur.get(x, y + 1)
                    {
                        next.set(x, y, true);
                    }
                }
            }
            cur = next;
        }
        cur
    }

    fn is_contour(&self, x: u32, y: u32) -> bool {
        if !self.get(x, y) {
            return false;
        }
        x == 0
            || y == 0
            || x + 1 == self.width
            || y + 1 == self.height
            || !self.get(x - 1, y)
            || !self.get(x + 1, y)
            || !self.get(x, y - 1)
            || !self.get(x, y + 1)
    }
}

/// Intersection-over-union of two same-sized masks.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GroundingError> {
    a.same_shape(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(GroundingError::EmptyMask);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of `a`'s foreground that lies inside `b`.
pub fn containment(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GroundingError> {
    a.same_shape(b)?;
    let mut inter = 0usize;
    let mut area = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        area += x as usize;
    }
    if area == 0 {
        return Err(GroundingError::EmptyMask);
    }
    Ok(inter as f64 / area as f64)
}

/// Fraction of the mask's contour that lies on the image border.
///
/// The contour is every foreground pixel with a background or out-of-image
/// 4-neighbor. A high value means the object is cut off by the frame edge.
pub fn truncation_penalty(mask: &BinaryMask) -> f64 {
    let mut contour = 0usize;
    let mut border = 0usize;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.is_contour(x, y) {
                contour += 1;
                if x == 0 || y == 0 || x + 1 == mask.width || y + 1 == mask.height {
                    border += 1;
                }
            }
        }
    }
    if contour == 0 {
        return 0.0;
    }
    (border as f64 / contour as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_area: f64,
    pub w_trunc: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { w_area: 1.0, w_trunc: 2.0 }
    }
}

/// View-quality score: visible area discounted by truncation.
///
/// `max(0, area · w_area · (1 − penalty · w_trunc / w_area))`, so a mask
/// whose truncated fraction reaches `w_area / w_trunc` scores zero.
pub fn score_mask(mask: &BinaryMask, weights: &ScoreWeights) -> f64 {
    score_value(mask.area() as f64, truncation_penalty(mask), weights)
}

/// Area reward minus truncation penalty, floored at zero.
pub fn score_value(area: f64, penalty: f64, weights: &ScoreWeights) -> f64 {
    (area * weights.w_area - area * penalty * weights.w_trunc).max(0.0)
}

/// Masks of one track keyed by frame index (strictly increasing by key).
pub type TrackMasks = BTreeMap<usize, BinaryMask>;

/// All tracked masks in a scene, keyed by track id.
#[derive(Debug, Clone, Default)]
pub struct TrackedMaskSet {
    pub tracks: BTreeMap<String, TrackMasks>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationParams {
    pub iou_thresh: f64,
    pub containment_thresh: f64,
    pub n_min: usize,
}

impl Default for ConsolidationParams {
    fn default() -> Self {
        Self { iou_thresh: 0.5, containment_thresh: 0.9, n_min: 5 }
    }
}

/// One frame's detections for a shared semantic label.
pub struct FrameMask<'a> {
    pub track_id: &'a str,
    pub mask: &'a BinaryMask,
}

/// Merges duplicate same-label detections within one frame.
///
/// Two masks merge when their IoU or either containment crosses its
/// threshold; merging is transitive. Each group unions its pixels and keeps
/// the lexicographically smallest member id.
pub fn merge_intraframe(
    masks: &[FrameMask<'_>],
    params: &ConsolidationParams,
) -> Result<Vec<(String, BinaryMask)>, GroundingError> {
    let n = masks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let iou = mask_iou(masks[i].mask, masks[j].mask)?;
            let cij = containment(masks[i].mask, masks[j].mask)?;
            let cji = containment(masks[j].mask, masks[i].mask)?;
            if iou >= params.iou_thresh
                || cij >= params.containment_thresh
                || cji >= params.containment_thresh
            {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let id = members.iter().map(|&i| masks[i].track_id).min().unwrap().to_string();
        let mut merged = masks[members[0]].mask.clone();
        for &i in &members[1..] {
            merged.union_with(masks[i].mask)?;
        }
        out.push((id, merged));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Drops tracks observed in fewer than `n_min` frames.
pub fn filter_tracklets(set: TrackedMaskSet, n_min: usize) -> TrackedMaskSet {
    TrackedMaskSet {
        tracks: set.tracks.into_iter().filter(|(_, frames)| frames.len() >= n_min).collect(),
    }
}

/// Frame with the highest mask score; ties break to the earliest frame.
pub fn select_canonical_view(
    track_id: &str,
    masks: &TrackMasks,
    weights: &ScoreWeights,
) -> Result<(usize, f64), GroundingError> {
    let mut best: Option<(usize, f64)> = None;
    for (&frame, mask) in masks {
        let score = score_mask(mask, weights);
        match best {
            Some((_, s)) if score <= s => {}
            _ if score > 0.0 => best = Some((frame, score)),
            _ => {}
        }
    }
    best.ok_or_else(|| GroundingError::NoValidView(track_id.to_string()))
}
