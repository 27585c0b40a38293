//! Cloud comparison: chamfer distance and match fractions.

use rayon::prelude::*;

use crate::cloud::{PointCloud, ARM_LABEL};
use crate::index::{to_f64, VoxelIndex};

/// Mean distance from each point of `from` to its nearest point in `to`.
/// `None` when either side is empty.
pub fn mean_nearest(from: &PointCloud, to: &PointCloud, cell: f64) -> Option<f64> {
    if from.is_empty() || to.is_empty() {
        return None;
    }
    let index = VoxelIndex::new(to.points.iter(), cell);
    let sum: f64 = from
        .points
        .par_iter()
        .map(|p| index.nearest(&to_f64(p)).map_or(0.0, |(_, d)| d))
        .sum();
    Some(sum / from.len() as f64)
}

/// Symmetric chamfer distance: the average of both directed mean
/// nearest-neighbor distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud, cell: f64) -> Option<f64> {
    Some(0.5 * (mean_nearest(a, b, cell)? + mean_nearest(b, a, cell)?))
}

/// Fraction of `reference` points that have a `candidate` point within
/// `tol(depth)` meters, where depth is the reference point's z.
pub fn matched_fraction<F>(reference: &PointCloud, candidate: &PointCloud, tol: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    if reference.is_empty() {
        return 1.0;
    }
    if candidate.is_empty() {
        return 0.0;
    }
    let cell = reference
        .points
        .iter()
        .map(|p| tol(p[2] as f64))
        .fold(f64::INFINITY, f64::min)
        .max(1e-4);
    let index = VoxelIndex::new(candidate.points.iter(), cell);
    let hits = reference
        .points
        .par_iter()
        .filter(|p| index.any_within(&to_f64(p), tol(p[2] as f64)))
        .count();
    hits as f64 / reference.len() as f64
}

/// The cloud without arm-labeled points.
pub fn without_arm(c: &PointCloud) -> PointCloud {
    let keep: Vec<usize> = (0..c.len()).filter(|&i| c.label(i) != ARM_LABEL).collect();
    c.select(&keep)
}
