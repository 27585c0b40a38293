//! Group-wise spatial augmentation.
//!
//! Skills are visited from last to first. A skill's object group (targets and
//! in-hand objects) is moved by a freshly sampled in-plane transform only when
//! no later skill has pinned any of its members; otherwise the skill inherits
//! the placement of the pinned members so that later preconditions still hold.
//! The transform a skill's trajectory and objects finally receive is called
//! its effective transform.

pub mod fixed;
pub mod footprint;
mod materialize;
pub mod plane;
pub mod seed;

use std::collections::BTreeMap;

use nalgebra::{Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, IdSet};
use crate::demo::ParsedScene;
use crate::pose::Pose;

pub use fixed::{update_fixed_set, FixedSet};
pub use materialize::{
    augment_skill, check_bimanual_constraint, generate, materialize, materialize_trajectory, observations,
    plan_batch, BatchReport, DemoTuple, GeneratedDemo, Trajectory,
};
pub use plane::{fit_table_plane, PlaneError, PlaneFitConfig, PlaneFrame, TablePlane};
pub use seed::{child_seed, splitmix64};

use footprint::{convex_hull, polygon_distance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error("SamplingExhausted: no feasible placement for skill {skill} after {attempts} attempts")]
    SamplingExhausted { skill: usize, attempts: usize },
    #[error("GroupConflict: skill {skill} touches objects pinned by different later placements")]
    GroupConflict { skill: usize },
    #[error("ConstraintViolation: relative arm pose drifts at frame {frame} ({drift:.3e})")]
    ConstraintViolation { frame: usize, drift: f64 },
    #[error("annotation does not match scene: {0}")]
    Mismatch(String),
}

/// Rectangle in table-plane coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Workspace {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SamplingMode {
    Continuous,
    /// Combination `n` places the first augmentable group (in backtracking
    /// order) at `locations[n % L]` with yaw `rotations[(n / L) % R]`.
    Grid {
        locations: Vec<[f64; 2]>,
        rotations: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub workspace: Workspace,
    /// Yaw range, ± radians.
    pub rotation: f64,
    pub perturb_radius: f64,
    /// ± radians.
    pub perturb_rotation: f64,
    pub perturbations: usize,
    pub replays: usize,
    pub combinations: usize,
    pub mode: SamplingMode,
    /// Minimum footprint distance to objects outside the group, meters.
    pub clearance: f64,
    pub max_attempts: usize,
    /// Environment translation range, ± meters per in-plane axis.
    pub env_translation: f64,
    /// Environment yaw range, ± radians.
    pub env_rotation: f64,
    pub plane: PlaneFitConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            workspace: Workspace {
                x: [-0.3, 0.3],
                y: [-0.25, 0.25],
            },
            rotation: 45f64.to_radians(),
            perturb_radius: 0.015,
            perturb_rotation: 20f64.to_radians(),
            perturbations: 3,
            replays: 3,
            combinations: 16,
            mode: SamplingMode::Continuous,
            clearance: 0.02,
            max_attempts: 1000,
            env_translation: 0.05,
            env_rotation: 10f64.to_radians(),
            plane: PlaneFitConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn total(&self) -> usize {
        self.replays * self.combinations * self.perturbations
    }
}

/// Sampled placement of a group: where its centroid goes on the table and the yaw about it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: [f64; 2],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillTransform {
    /// 0-based skill index.
    pub skill: usize,
    pub augmented: bool,
    pub placement: Option<Placement>,
    /// Sampled transform, identity for skills whose group was pinned.
    pub transform: Pose,
    /// Transform actually applied to the skill's trajectory and group.
    pub effective: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTransformPlan {
    pub seed: u64,
    pub plane: TablePlane,
    pub skills: Vec<SkillTransform>,
    pub environment: Pose,
}

impl GroupTransformPlan {
    /// A plan that leaves everything in place.
    pub fn identity(plane: TablePlane, skill_count: usize) -> Self {
        GroupTransformPlan {
            seed: 0,
            plane,
            skills: (0..skill_count)
                .map(|skill| SkillTransform {
                    skill,
                    augmented: false,
                    placement: None,
                    transform: Pose::identity(),
                    effective: Pose::identity(),
                })
                .collect(),
            environment: Pose::identity(),
        }
    }

    pub fn effective(&self) -> Vec<Pose> {
        self.skills.iter().map(|s| s.effective).collect()
    }
}

/// Placement of a group: in-plane translation taking `pivot` to `center`,
/// after a yaw about the plane normal through `pivot`.
pub fn placement_transform(plane: &TablePlane, pivot: &Vector3<f64>, p: &Placement) -> Pose {
    let frame = plane.frame();
    let target = frame.from_plane(&Vector2::new(p.center[0], p.center[1]));
    let rot = Pose::rotation_about(&plane.axis(), p.yaw, pivot);
    let shift = target - pivot;
    let mut m = *rot.matrix();
    m[(0, 3)] += shift.x;
    m[(1, 3)] += shift.y;
    m[(2, 3)] += shift.z;
    Pose::from_matrix(m).expect("rigid by construction")
}

struct SkillInfo {
    group: IdSet,
    hand: IdSet,
    target: IdSet,
    /// Group centroid at skill start, projected on the plane.
    pivot: Vector3<f64>,
    /// Plane-coordinate hull at skill start for every object.
    hulls: BTreeMap<u16, Vec<Vector2<f64>>>,
}

/// Everything about a scene that stays the same across sampled plans.
pub struct PlanContext<'a> {
    pub scene: &'a ParsedScene,
    pub ann: &'a AnnotationSet,
    pub cfg: &'a SamplerConfig,
    pub plane: TablePlane,
    frame: PlaneFrame,
    skills: Vec<SkillInfo>,
}

impl<'a> PlanContext<'a> {
    pub fn new(scene: &'a ParsedScene, ann: &'a AnnotationSet, cfg: &'a SamplerConfig) -> Result<Self, AugmentError> {
        let plane = fit_table_plane(&scene.environment, &cfg.plane)?;
        Self::with_plane(scene, ann, cfg, plane)
    }

    pub fn with_plane(
        scene: &'a ParsedScene,
        ann: &'a AnnotationSet,
        cfg: &'a SamplerConfig,
        plane: TablePlane,
    ) -> Result<Self, AugmentError> {
        if ann.horizon() > scene.horizon() {
            return Err(AugmentError::Mismatch(format!(
                "annotation covers {} frames, scene has {}",
                ann.horizon(),
                scene.horizon()
            )));
        }
        if ann.arm_count != scene.demo.arm_count {
            return Err(AugmentError::Mismatch(format!(
                "annotation has {} arms, demonstration {}",
                ann.arm_count, scene.demo.arm_count
            )));
        }
        let frame = plane.frame();
        let ids = scene.object_ids();
        let mut skills = Vec::with_capacity(ann.skill_count());
        for i in 0..ann.skill_count() {
            let seg = ann.skill(i);
            let t0 = seg.start - 1;
            let mut hulls = BTreeMap::new();
            let mut sum = Vector3::zeros();
            let mut count = 0usize;
            for &id in &ids {
                let cloud = scene
                    .object_cloud(id, t0)
                    .ok_or_else(|| AugmentError::Mismatch(format!("object {id} has no cloud at frame {}", t0 + 1)))?;
                let pts: Vec<Vector2<f64>> = (0..cloud.len())
                    .map(|j| frame.to_plane(&cloud.point(j)))
                    .collect();
                if seg.group().contains(&id) {
                    if let Some(c) = cloud.centroid() {
                        sum += c;
                        count += 1;
                    }
                }
                hulls.insert(id, convex_hull(&pts));
            }
            for id in seg.group() {
                if !ids.contains(&id) {
                    return Err(AugmentError::Mismatch(format!("skill {} names unknown object {id}", i + 1)));
                }
            }
            let centroid = if count > 0 { sum / count as f64 } else { frame.origin };
            skills.push(SkillInfo {
                group: seg.group(),
                hand: seg.in_hand(),
                target: seg.target.clone(),
                pivot: plane.project(&centroid),
                hulls,
            });
        }
        Ok(PlanContext {
            scene,
            ann,
            cfg,
            plane,
            frame,
            skills,
        })
    }

    fn moved_hull(&self, hull: &[Vector2<f64>], t: &Pose) -> Vec<Vector2<f64>> {
        hull.iter()
            .map(|q| self.frame.to_plane(&t.transform_point(&self.frame.from_plane(q))))
            .collect()
    }

    /// Group footprints stay inside the workspace and keep their clearance
    /// to objects outside the group.
    fn feasible(&self, i: usize, e: &Pose, carry: &BTreeMap<u16, Pose>) -> bool {
        let info = &self.skills[i];
        let placed: Vec<Vec<Vector2<f64>>> = info
            .group
            .iter()
            .map(|id| self.moved_hull(&info.hulls[id], e))
            .collect();
        if placed.iter().flatten().any(|p| !self.cfg.workspace.contains(p)) {
            return false;
        }
        for (id, hull) in &info.hulls {
            if info.group.contains(id) {
                continue;
            }
            let other = self.moved_hull(hull, carry.get(id).unwrap_or(&Pose::identity()));
            if placed.iter().any(|h| polygon_distance(h, &other) < self.cfg.clearance) {
                return false;
            }
        }
        true
    }

    /// Walks skills last to first; `choose` proposes a placement for every
    /// augmentable skill and is retried until the result is feasible.
    fn backtrack<F>(&self, seed: u64, environment: Pose, mut choose: F) -> Result<GroupTransformPlan, AugmentError>
    where
        F: FnMut(usize, usize, usize) -> Option<Placement>,
    {
        let n = self.skills.len();
        let mut fixed = FixedSet::default();
        let mut carry: BTreeMap<u16, Pose> = BTreeMap::new();
        let mut out = vec![None; n];
        let mut order = 0usize;
        for i in (0..n).rev() {
            let info = &self.skills[i];
            let augmentable = !info.group.is_empty() && !fixed.intersects(&info.group);
            let st = if augmentable {
                let mut found = None;
                for attempt in 0..self.cfg.max_attempts {
                    let Some(p) = choose(i, order, attempt) else { break };
                    let t = placement_transform(&self.plane, &info.pivot, &p);
                    if self.feasible(i, &t, &carry) {
                        found = Some((p, t));
                        break;
                    }
                }
                order += 1;
                let (p, t) = found.ok_or(AugmentError::SamplingExhausted {
                    skill: i + 1,
                    attempts: self.cfg.max_attempts,
                })?;
                SkillTransform {
                    skill: i,
                    augmented: true,
                    placement: Some(p),
                    transform: t,
                    effective: t,
                }
            } else {
                let mut inherited: Option<Pose> = None;
                for id in info.group.iter().filter(|id| fixed.contains(**id)) {
                    let c = carry[id];
                    match inherited {
                        Some(prev) if prev != c => return Err(AugmentError::GroupConflict { skill: i + 1 }),
                        _ => inherited = Some(c),
                    }
                }
                SkillTransform {
                    skill: i,
                    augmented: false,
                    placement: None,
                    transform: Pose::identity(),
                    effective: inherited.unwrap_or_default(),
                }
            };
            for id in &info.group {
                carry.insert(*id, st.effective);
            }
            fixed = update_fixed_set(&fixed, &info.target, &info.hand);
            out[i] = Some(st);
        }
        Ok(GroupTransformPlan {
            seed,
            plane: self.plane,
            skills: out.into_iter().map(|s| s.expect("every skill visited")).collect(),
            environment,
        })
    }

    fn sample_environment(&self, rng: &mut ChaCha8Rng) -> Pose {
        let d = self.cfg.env_translation;
        let a = self.cfg.env_rotation;
        let dx = if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 };
        let dy = if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 };
        let yaw = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
        let o = self.frame.origin;
        placement_transform(
            &self.plane,
            &o,
            &Placement {
                center: [dx, dy],
                yaw,
            },
        )
    }

    fn random_placement(&self, rng: &mut ChaCha8Rng) -> Placement {
        let w = &self.cfg.workspace;
        let r = self.cfg.rotation;
        Placement {
            center: [uniform(rng, w.x[0], w.x[1]), uniform(rng, w.y[0], w.y[1])],
            yaw: uniform(rng, -r, r),
        }
    }

    /// Base plan for combination `combination`.
    pub fn sample(&self, seed: u64, combination: usize) -> Result<GroupTransformPlan, AugmentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let environment = self.sample_environment(&mut rng);
        let cfg = self.cfg;
        self.backtrack(seed, environment, |_, order, attempt| match (&cfg.mode, order) {
            (SamplingMode::Grid { locations, rotations }, 0) => {
                if attempt > 0 || locations.is_empty() {
                    return None;
                }
                let loc = locations[combination % locations.len()];
                let yaw = if rotations.is_empty() {
                    0.0
                } else {
                    rotations[(combination / locations.len()) % rotations.len()]
                };
                Some(Placement { center: loc, yaw })
            }
            _ => Some(self.random_placement(&mut rng)),
        })
    }

    /// Small jitter of every sampled placement of `base`.
    pub fn perturb(&self, base: &GroupTransformPlan, seed: u64) -> Result<GroupTransformPlan, AugmentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius = self.cfg.perturb_radius;
        let rot = self.cfg.perturb_rotation;
        self.backtrack(seed, base.environment, |i, _, _| {
            let p = base.skills[i].placement?;
            // uniform in the disc
            let r = radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            Some(Placement {
                center: [p.center[0] + r * phi.cos(), p.center[1] + r * phi.sin()],
                yaw: p.yaw + uniform(&mut rng, -rot, rot),
            })
        })
    }

    pub fn up(&self) -> Unit<Vector3<f64>> {
        self.plane.axis()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// One base plan from `seed` with continuous sampling.
pub fn plan_augmentation(
    scene: &ParsedScene,
    ann: &AnnotationSet,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<GroupTransformPlan, AugmentError> {
    PlanContext::new(scene, ann, cfg)?.sample(seed, 0)
}
