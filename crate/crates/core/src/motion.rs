//! Free-space end-effector paths between skills.
//!
//! Positions follow lift, transit and descend legs (lift along the table
//! normal); the orientation turns along the geodesic at a constant rate. The
//! number of waypoints comes from the path length and rotation angle, and
//! gripper states are resampled from the source motion by normalized time.

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::demo::Grip;
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Maximum position change between consecutive waypoints, meters.
    pub step: f64,
    /// Height of the lift and descend legs, meters. Zero gives a straight line.
    pub lift: f64,
    /// Maximum rotation between consecutive waypoints, radians.
    pub rot_step: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            step: 0.01,
            lift: 0.05,
            rot_step: 5f64.to_radians(),
        }
    }
}

fn legs(start: &Vector3<f64>, goal: &Vector3<f64>, up: &Unit<Vector3<f64>>, lift: f64) -> Vec<Vector3<f64>> {
    let mut pts = vec![*start];
    if lift > 0.0 {
        pts.push(start + up.as_ref() * lift);
        pts.push(goal + up.as_ref() * lift);
    }
    pts.push(*goal);
    pts.dedup();
    pts
}

fn path_length(pts: &[Vector3<f64>]) -> f64 {
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn point_at(pts: &[Vector3<f64>], mut s: f64) -> Vector3<f64> {
    for w in pts.windows(2) {
        let len = (w[1] - w[0]).norm();
        if s <= len {
            return if len > 0.0 {
                w[0] + (w[1] - w[0]) * (s / len)
            } else {
                w[0]
            };
        }
        s -= len;
    }
    *pts.last().unwrap()
}

fn steps_for(amount: f64, per_step: f64) -> usize {
    if amount <= 0.0 {
        return 0;
    }
    // tolerate rounding when amount is an exact multiple of per_step
    (amount / per_step - 1e-9).ceil().max(1.0) as usize
}

/// Number of segments (waypoints minus one) a motion from `start` to `goal` needs.
pub fn segment_count(start: &Pose, goal: &Pose, up: &Unit<Vector3<f64>>, cfg: &PlannerConfig) -> usize {
    if start == goal {
        return 1;
    }
    let pts = legs(&start.translation(), &goal.translation(), up, cfg.lift);
    let angle = start.quaternion().angle_to(&goal.quaternion());
    steps_for(path_length(&pts), cfg.step)
        .max(steps_for(angle, cfg.rot_step))
        .max(1)
}

/// Plans a motion with the number of segments it needs.
pub fn plan_motion(
    start: &Pose,
    goal: &Pose,
    source_grips: &[Grip],
    up: &Unit<Vector3<f64>>,
    cfg: &PlannerConfig,
) -> Vec<(Pose, Grip)> {
    let n = segment_count(start, goal, up, cfg);
    plan_motion_segments(start, goal, source_grips, up, cfg, n)
}

/// [`plan_path`] paired with resampled gripper states.
pub fn plan_motion_segments(
    start: &Pose,
    goal: &Pose,
    source_grips: &[Grip],
    up: &Unit<Vector3<f64>>,
    cfg: &PlannerConfig,
    segments: usize,
) -> Vec<(Pose, Grip)> {
    let path = plan_path(start, goal, up, cfg, segments);
    let grips = resample_grips(source_grips, path.len());
    path.into_iter().zip(grips).collect()
}

/// Path with exactly `segments` segments (`segments + 1` waypoints). The
/// spacing bound holds when `segments` is at least [`segment_count`].
pub fn plan_path(
    start: &Pose,
    goal: &Pose,
    up: &Unit<Vector3<f64>>,
    cfg: &PlannerConfig,
    segments: usize,
) -> Vec<Pose> {
    let segments = segments.max(1);
    let poses = if start == goal {
        vec![*start; segments + 1]
    } else {
        let pts = legs(&start.translation(), &goal.translation(), up, cfg.lift);
        let total = path_length(&pts);
        let q0 = start.quaternion();
        let q1 = goal.quaternion();
        let mut out = Vec::with_capacity(segments + 1);
        out.push(*start);
        for j in 1..segments {
            let f = j as f64 / segments as f64;
            let pos = point_at(&pts, total * f);
            let rot = q0.slerp(&q1, f).to_rotation_matrix();
            out.push(Pose::from_parts(&rot, pos));
        }
        out.push(*goal);
        out
    };
    poses
}

/// Resamples `source` to `n` entries by nearest normalized time.
pub fn resample_grips(source: &[Grip], n: usize) -> Vec<Grip> {
    if source.is_empty() || n == 0 {
        return Vec::new();
    }
    let m = source.len();
    (0..n)
        .map(|j| {
            let idx = if n == 1 {
                0
            } else {
                ((j as f64) * (m - 1) as f64 / (n - 1) as f64).round() as usize
            };
            source[idx.min(m - 1)]
        })
        .collect()
}
