//! Point clouds in the camera frame (+Z forward, +X right, +Y down).

use nalgebra::Vector3;

use crate::pose::Pose;

/// Label for environment or otherwise unlabeled points.
pub const UNLABELED: u16 = 0;
/// Label reserved for robot-arm points.
pub const ARM_LABEL: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("{what} length {got} does not match point count {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub labels: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        PointCloud {
            points,
            colors: None,
            labels: None,
        }
    }

    /// A cloud whose points all carry `label`.
    pub fn labeled(points: Vec<[f32; 3]>, label: u16) -> Self {
        let labels = vec![label; points.len()];
        PointCloud {
            points,
            colors: None,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(CloudError::NonFinite(i));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(CloudError::LengthMismatch {
                    what: "colors",
                    got: c.len(),
                    expected: self.points.len(),
                });
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.points.len() {
                return Err(CloudError::LengthMismatch {
                    what: "labels",
                    got: l.len(),
                    expected: self.points.len(),
                });
            }
        }
        Ok(())
    }

    pub fn label(&self, i: usize) -> u16 {
        self.labels.as_ref().map_or(UNLABELED, |l| l[i])
    }

    /// Replaces every label with `label`.
    pub fn with_label(mut self, label: u16) -> Self {
        self.labels = Some(vec![label; self.points.len()]);
        self
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        let p = self.points[i];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    /// Keeps points whose index satisfies `keep`, preserving order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Concatenates clouds. Colors survive only when every non-empty input
    /// has them; missing labels become [`UNLABELED`].
    pub fn concat<'a, I>(parts: I) -> PointCloud
    where
        I: IntoIterator<Item = &'a PointCloud>,
    {
        let parts: Vec<&PointCloud> = parts.into_iter().filter(|c| !c.is_empty()).collect();
        let n: usize = parts.iter().map(|c| c.len()).sum();
        let mut points = Vec::with_capacity(n);
        let keep_colors = !parts.is_empty() && parts.iter().all(|c| c.colors.is_some());
        let keep_labels = parts.iter().any(|c| c.labels.is_some());
        let mut colors = keep_colors.then(|| Vec::with_capacity(n));
        let mut labels = keep_labels.then(|| Vec::with_capacity(n));
        for c in parts {
            points.extend_from_slice(&c.points);
            if let (Some(dst), Some(src)) = (colors.as_mut(), c.colors.as_ref()) {
                dst.extend_from_slice(src);
            }
            if let Some(dst) = labels.as_mut() {
                match &c.labels {
                    Some(src) => dst.extend_from_slice(src),
                    None => dst.extend(std::iter::repeat_n(UNLABELED, c.len())),
                }
            }
        }
        PointCloud {
            points,
            colors,
            labels,
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum = (0..self.len()).fold(Vector3::zeros(), |acc, i| acc + self.point(i));
        Some(sum / self.len() as f64)
    }
}

/// Applies `t` to every point. Colors and labels are carried through.
pub fn transform_cloud(cloud: &PointCloud, t: &Pose) -> PointCloud {
    let r = t.rotation_matrix();
    let tr = t.translation();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let v = r * Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) + tr;
            [v.x as f32, v.y as f32, v.z as f32]
        })
        .collect();
    PointCloud {
        points,
        colors: cloud.colors.clone(),
        labels: cloud.labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_is_noop() {
        let c = PointCloud::labeled(vec![[0.1, 0.2, 0.3], [-1.0, 2.0, 5.0]], 4);
        assert_eq!(transform_cloud(&c, &Pose::identity()), c);
    }

    #[test]
    fn pure_translation() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0]]);
        let out = transform_cloud(&c, &Pose::from_translation(0.0, 0.0, 2.0));
        assert_eq!(out.points, vec![[1.0, 0.0, 2.0]]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0]]);
        let t = Pose::rotation_about(&Vector3::z_axis(), FRAC_PI_2, &Vector3::zeros());
        let p = transform_cloud(&c, &t).point(0);
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn concat_drops_partial_colors() {
        let mut a = PointCloud::new(vec![[0.0; 3]]);
        a.colors = Some(vec![[1, 2, 3]]);
        let b = PointCloud::labeled(vec![[1.0; 3]], 7);
        let c = PointCloud::concat([&a, &b]);
        assert!(c.colors.is_none());
        assert_eq!(c.labels, Some(vec![UNLABELED, 7]));
    }

    #[test]
    fn validate_catches_nan() {
        let c = PointCloud::new(vec![[0.0, f32::NAN, 1.0]]);
        assert_eq!(c.validate(), Err(CloudError::NonFinite(0)));
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -3.0..3.0f64,
            -3.0..3.0f64,
            -3.0..3.0f64,
            -1.0..1.0f64,
            -1.0..1.0f64,
            0.1..1.0f64,
            -3.1..3.1f64,
        )
            .prop_map(|(x, y, z, ax, ay, az, angle)| {
                let axis = nalgebra::Unit::new_normalize(Vector3::new(ax, ay, az));
                Pose::from_translation(x, y, z)
                    * Pose::rotation_about(&axis, angle, &Vector3::zeros())
            })
    }

    proptest! {
        // Points are stored as f32, so the round trip is bounded by single
        // precision rounding of the intermediate cloud.
        #[test]
        fn inverse_roundtrip(t in arb_pose(), pts in prop::collection::vec(prop::array::uniform3(-2.0f32..2.0), 1..50)) {
            let c = PointCloud::new(pts);
            let back = transform_cloud(&transform_cloud(&c, &t), &t.inverse());
            for (a, b) in c.points.iter().zip(&back.points) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 4e-6);
                }
            }
        }

        #[test]
        fn composition_matches_sequential(t1 in arb_pose(), t2 in arb_pose(), p in prop::array::uniform3(-2.0f64..2.0)) {
            let v = Vector3::new(p[0], p[1], p[2]);
            let seq = t2.transform_point(&t1.transform_point(&v));
            let comp = t2.compose(&t1).transform_point(&v);
            prop_assert!((seq - comp).amax() <= 1e-9);
        }
    }
}
