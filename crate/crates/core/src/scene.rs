//! Decomposes a raw demonstration into environment, complete objects and arm.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cloud::{transform_cloud, PointCloud, ARM_LABEL};
use crate::demo::{Demonstration, ObjectTemplate, ParsedScene, TrackingInput};
use crate::index::{to_f64, VoxelIndex};
use crate::pose::Pose;

/// Default set-difference tolerance, meters.
pub const DEFAULT_EPS: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("object {0} is not rigid and cannot be completed from a template")]
    NonRigidTemplate(u16),
    #[error("missing pose for object {object} at frame {frame}")]
    MissingPose { frame: usize, object: u16 },
    #[error("missing tracked cloud for non-rigid object {object} at frame {frame}")]
    MissingCloud { frame: usize, object: u16 },
    #[error("set-difference tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// Places a rigid template at `pose`; every output point is labeled with the template id.
pub fn complete_object(template: &ObjectTemplate, pose: &Pose) -> Result<PointCloud, SceneError> {
    if !template.rigid {
        return Err(SceneError::NonRigidTemplate(template.id));
    }
    Ok(transform_cloud(&template.cloud, pose).with_label(template.id))
}

/// Points of `raw` farther than `eps` from every point of `env` and `objects`,
/// in their original order.
pub fn extract_arm(
    raw: &PointCloud,
    env: &PointCloud,
    objects: &[PointCloud],
    eps: f64,
) -> Result<PointCloud, SceneError> {
    if !(eps > 0.0) {
        return Err(SceneError::BadTolerance(eps));
    }
    let refs = env
        .points
        .iter()
        .chain(objects.iter().flat_map(|o| o.points.iter()));
    let index = VoxelIndex::new(refs, eps);
    let keep: Vec<usize> = raw
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| !index.any_within(&to_f64(p), eps))
        .map(|(i, _)| i)
        .collect();
    Ok(raw.select(&keep))
}

/// Builds the parsed scene. `templates` lists every object (rigid or not).
pub fn parse_scene(
    demo: &Demonstration,
    templates: &[ObjectTemplate],
    tracking: &TrackingInput,
    eps: f64,
) -> Result<ParsedScene, SceneError> {
    let h = demo.horizon();
    let mut object_poses = BTreeMap::new();
    let mut nonrigid = BTreeMap::new();
    for t in templates {
        if t.rigid {
            let poses = tracking.poses.get(&t.id);
            for frame in 0..h {
                if poses.and_then(|p| p.get(frame)).is_none() {
                    return Err(SceneError::MissingPose {
                        frame: frame + 1,
                        object: t.id,
                    });
                }
            }
            object_poses.insert(t.id, poses.unwrap()[..h].to_vec());
        } else {
            let clouds = tracking.nonrigid.get(&t.id);
            for frame in 0..h {
                if clouds.and_then(|c| c.get(frame)).is_none() {
                    return Err(SceneError::MissingCloud {
                        frame: frame + 1,
                        object: t.id,
                    });
                }
            }
            nonrigid.insert(t.id, clouds.unwrap()[..h].to_vec());
        }
    }
    let environment = tracking.environment.clone();
    let arm = (0..h)
        .into_par_iter()
        .map(|frame| {
            let objects: Vec<PointCloud> = templates
                .iter()
                .map(|t| {
                    if t.rigid {
                        complete_object(t, &object_poses[&t.id][frame])
                    } else {
                        Ok(nonrigid[&t.id][frame].clone())
                    }
                })
                .collect::<Result<_, _>>()?;
            let arm = extract_arm(&demo.frames[frame].observation, &environment, &objects, eps)?;
            Ok(arm.with_label(ARM_LABEL))
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    Ok(ParsedScene {
        demo: demo.clone(),
        environment,
        templates: templates.to_vec(),
        object_poses,
        nonrigid,
        arm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_arm(raw: &PointCloud, refs: &[[f32; 3]], eps: f64) -> Vec<[f32; 3]> {
        raw.points
            .iter()
            .filter(|p| {
                refs.iter().all(|q| {
                    let d2: f64 = (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum();
                    d2 > eps * eps
                })
            })
            .copied()
            .collect()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f32; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.5..1.5),
                ]
            })
            .collect()
    }

    #[test]
    fn full_overlap_gives_empty_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let env = PointCloud::new(random_points(&mut rng, 500));
        let arm = extract_arm(&env, &env, &[], 0.005).unwrap();
        assert!(arm.is_empty());
    }

    #[test]
    fn isolated_point_is_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let env = PointCloud::new(random_points(&mut rng, 500));
        let mut raw = env.clone();
        raw.points.push([5.0, 5.0, 5.0]);
        let arm = extract_arm(&raw, &env, &[], 0.005).unwrap();
        assert_eq!(arm.points, vec![[5.0, 5.0, 5.0]]);
    }

    #[test]
    fn matches_exhaustive_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let env = PointCloud::new(random_points(&mut rng, 4000));
        let obj = PointCloud::new(random_points(&mut rng, 1000));
        let raw = PointCloud::new(random_points(&mut rng, 10_000));
        for eps in [0.005, 0.02, 0.05] {
            let fast = extract_arm(&raw, &env, std::slice::from_ref(&obj), eps).unwrap();
            let mut refs = env.points.clone();
            refs.extend_from_slice(&obj.points);
            assert_eq!(fast.points, brute_force_arm(&raw, &refs, eps), "eps={eps}");
        }
    }

    #[test]
    fn larger_eps_never_grows_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let env = PointCloud::new(random_points(&mut rng, 3000));
        let raw = PointCloud::new(random_points(&mut rng, 3000));
        let mut prev = usize::MAX;
        for eps in [0.002, 0.005, 0.01, 0.03, 0.1] {
            let n = extract_arm(&raw, &env, &[], eps).unwrap().len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let c = PointCloud::new(vec![[0.0; 3]]);
        assert!(matches!(extract_arm(&c, &c, &[], 0.0), Err(SceneError::BadTolerance(_))));
    }

    #[test]
    fn complete_object_places_template() {
        let cube: Vec<[f32; 3]> = (0..8)
            .map(|i| [(i & 1) as f32 - 0.5, ((i >> 1) & 1) as f32 - 0.5, ((i >> 2) & 1) as f32 - 0.5])
            .collect();
        let tpl = ObjectTemplate {
            id: 3,
            cloud: PointCloud::new(cube),
            rigid: true,
        };
        let same = complete_object(&tpl, &Pose::identity()).unwrap();
        assert_eq!(same.points, tpl.cloud.points);
        let moved = complete_object(&tpl, &Pose::from_translation(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(moved.len(), 8);
        let c = moved.centroid().unwrap();
        assert!((c.z - 1.0).abs() < 1e-9);
        assert!(moved.labels.unwrap().iter().all(|&l| l == 3));

        let soft = ObjectTemplate { rigid: false, ..tpl };
        assert_eq!(
            complete_object(&soft, &Pose::identity()),
            Err(SceneError::NonRigidTemplate(3))
        );
    }
}
