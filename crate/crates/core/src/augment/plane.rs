//! Dominant-plane fitting for the table surface.

use nalgebra::{Matrix3, SymmetricEigen, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlaneError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFitConfig {
    /// Inlier distance, meters.
    pub threshold: f64,
    pub iterations: usize,
    /// Minimum share of points the best plane must explain.
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for PlaneFitConfig {
    fn default() -> Self {
        PlaneFitConfig {
            threshold: 0.01,
            iterations: 256,
            min_inlier_fraction: 0.3,
            seed: 0,
        }
    }
}

/// Plane `normal . p + offset = 0`, normal facing the camera (so `offset >= 0`
/// is the camera's height above the plane).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl TablePlane {
    pub fn new(normal: Vector3<f64>, point: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let mut plane = TablePlane {
            normal: n,
            offset: -n.dot(&point),
        };
        if plane.offset < 0.0 {
            plane.normal = -plane.normal;
            plane.offset = -plane.offset;
        }
        plane
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    pub fn axis(&self) -> Unit<Vector3<f64>> {
        Unit::new_unchecked(self.normal)
    }

    /// In-plane coordinate frame: origin where the optical axis meets the
    /// plane (closest point to the camera if it never does), first axis along
    /// the projected camera +X.
    pub fn frame(&self) -> PlaneFrame {
        let n = self.normal;
        let origin = if n.z.abs() > 1e-6 && -self.offset / n.z > 0.0 {
            Vector3::new(0.0, 0.0, -self.offset / n.z)
        } else {
            -n * self.offset
        };
        let mut e1 = Vector3::x() - n * n.x;
        if e1.norm() < 1e-6 {
            e1 = Vector3::y() - n * n.y;
        }
        let e1 = e1.normalize();
        let e2 = n.cross(&e1);
        PlaneFrame { origin, e1, e2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFrame {
    pub origin: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl PlaneFrame {
    pub fn to_plane(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = p - self.origin;
        Vector2::new(d.dot(&self.e1), d.dot(&self.e2))
    }

    pub fn from_plane(&self, q: &Vector2<f64>) -> Vector3<f64> {
        self.origin + self.e1 * q.x + self.e2 * q.y
    }
}

/// Least-squares plane through `pts` (smallest principal axis of the covariance).
pub fn least_squares_plane(pts: &[Vector3<f64>]) -> Option<TablePlane> {
    if pts.len() < 3 {
        return None;
    }
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    // a line has two vanishing eigenvalues
    let mut sorted: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    if sorted[1] <= 1e-18 * sorted[2].max(1e-300) {
        return None;
    }
    let n: Vector3<f64> = eig.eigenvectors.column(i).into_owned();
    Some(TablePlane::new(n, c))
}

/// Robust consensus fit of the dominant plane of `env`.
pub fn fit_table_plane(env: &PointCloud, cfg: &PlaneFitConfig) -> Result<TablePlane, PlaneError> {
    let pts: Vec<Vector3<f64>> = (0..env.len()).map(|i| env.point(i)).collect();
    if pts.len() < 3 {
        return Err(PlaneError::DegenerateGeometry(format!(
            "{} points cannot define a plane",
            pts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, TablePlane)> = None;
    let exhaustive = pts.len() == 3;
    let iterations = if exhaustive { 1 } else { cfg.iterations };
    for _ in 0..iterations {
        let (a, b, c) = if exhaustive {
            (0, 1, 2)
        } else {
            (
                rng.random_range(0..pts.len()),
                rng.random_range(0..pts.len()),
                rng.random_range(0..pts.len()),
            )
        };
        let n = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        let scale = (pts[b] - pts[a]).norm() * (pts[c] - pts[a]).norm();
        if n.norm() <= 1e-12 * scale.max(1e-300) || scale == 0.0 {
            continue;
        }
        let plane = TablePlane::new(n, pts[a]);
        let count = pts
            .iter()
            .filter(|p| plane.signed_distance(p).abs() <= cfg.threshold)
            .count();
        if best.is_none_or(|(bc, _)| count > bc) {
            best = Some((count, plane));
        }
    }
    let Some((_, mut plane)) = best else {
        return Err(PlaneError::DegenerateGeometry(
            "all sampled point triples are collinear".into(),
        ));
    };
    // two refinement passes on the consensus set
    for _ in 0..2 {
        let inliers: Vec<Vector3<f64>> = pts
            .iter()
            .filter(|p| plane.signed_distance(p).abs() <= cfg.threshold)
            .copied()
            .collect();
        match least_squares_plane(&inliers) {
            Some(p) => plane = p,
            None => break,
        }
    }
    let count = pts
        .iter()
        .filter(|p| plane.signed_distance(p).abs() <= cfg.threshold)
        .count();
    let fraction = count as f64 / pts.len() as f64;
    if fraction < cfg.min_inlier_fraction {
        return Err(PlaneError::DegenerateGeometry(format!(
            "best plane explains {:.1}% of points, need {:.1}%",
            fraction * 100.0,
            cfg.min_inlier_fraction * 100.0
        )));
    }
    Ok(plane)
}
