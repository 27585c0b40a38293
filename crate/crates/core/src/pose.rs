//! Rigid transforms in SE(3).
//!
//! Poses act on column vectors and compose on the left: applying `a` and then
//! `b` to a point is the same as applying `b.compose(&a)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Orthonormality tolerance used when validating incoming matrices.
pub const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("last row must be exactly (0, 0, 0, 1)")]
    BadLastRow,
    #[error("rotation block is not orthonormal (|R*R^T - I|_inf = {0:.3e})")]
    NotOrthonormal(f64),
    #[error("rotation block has det {0:.6}, expected +1")]
    Reflection(f64),
    #[error("non-finite entry")]
    NonFinite,
}

/// Homogeneous 4x4 rigid transform, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(Matrix4<f64>);

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose(Matrix4::identity())
    }

    /// Validates and wraps a homogeneous matrix.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self, PoseError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(PoseError::BadLastRow);
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r * r.transpose() - Matrix3::identity()).amax();
        if err > ORTHO_TOL {
            return Err(PoseError::NotOrthonormal(err));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(PoseError::Reflection(det));
        }
        Ok(Pose(m))
    }

    /// Row-major 16 values, the on-disk layout.
    pub fn from_row_major(v: &[f64; 16]) -> Result<Self, PoseError> {
        Self::from_matrix(Matrix4::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    /// Builds from a rotation and translation without re-validating.
    pub fn from_parts(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Pose(m)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(&Rotation3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation by `angle` radians about `axis` passing through `pivot`.
    pub fn rotation_about(axis: &Unit<Vector3<f64>>, angle: f64, pivot: &Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(axis, angle);
        Self::from_parts(&r, pivot - r * pivot)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation_matrix())
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation())
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut m = self.0 * other.0;
        m[(3, 0)] = 0.0;
        m[(3, 1)] = 0.0;
        m[(3, 2)] = 0.0;
        m[(3, 3)] = 1.0;
        Pose(m)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation_matrix().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Pose(m)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation()
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    /// Geodesic angle of the rotation part, radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation_matrix().trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Largest absolute entry difference, used for tolerance checks.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.0 - other.0).amax()
    }

    /// Translation distance and rotation angle between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.translation().norm(), rel.rotation_angle())
    }

    pub fn is_identity(&self) -> bool {
        self.0 == Matrix4::identity()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 4]> = (0..4)
            .map(|r| [self.0[(r, 0)], self.0[(r, 1)], self.0[(r, 2)], self.0[(r, 3)]])
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: [[f64; 4]; 4] = Deserialize::deserialize(d)?;
        let mut flat = [0.0; 16];
        for (r, row) in rows.iter().enumerate() {
            flat[r * 4..r * 4 + 4].copy_from_slice(row);
        }
        Pose::from_row_major(&flat).map_err(serde::de::Error::custom)
    }
}
