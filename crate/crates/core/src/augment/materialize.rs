//! Turning a plan into a demonstration: skill slices follow their effective
//! transforms, motions are re-planned between them, and every frame's cloud
//! is rebuilt from the parsed scene.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{child_seed, AugmentError, GroupTransformPlan, PlanContext};
use crate::annotation::{AnnotationSet, IdSet, Segment};
use crate::cloud::{transform_cloud, PointCloud, UNLABELED};
use crate::demo::{Action, Demonstration, Frame, Grip, ParsedScene};
use crate::motion::{plan_path, resample_grips, segment_count, PlannerConfig};
use crate::pose::Pose;

/// Applies a world-frame transform to every end-effector pose; grips are kept.
pub fn augment_skill(actions: &[Action], t: &Pose) -> Vec<Action> {
    actions
        .iter()
        .map(|a| Action {
            ee: a.ee.iter().map(|p| t.compose(p)).collect(),
            grip: a.grip.clone(),
        })
        .collect()
}

/// Actions and per-object placements of a generated demonstration, without clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<Action>,
    /// 0-based source frame each output frame was derived from.
    pub source_frames: Vec<usize>,
    /// Output segments, 1-based frames.
    pub segments: Vec<Segment>,
    /// Transform applied to each object's source cloud, per output frame.
    pub object_transforms: BTreeMap<u16, Vec<Pose>>,
    /// `Â_t · A_s⁻¹` per output frame and arm.
    pub arm_deltas: Vec<Vec<Pose>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

fn holding_arm(hands: &[IdSet], id: u16) -> Option<usize> {
    hands.iter().position(|h| h.contains(&id))
}

pub fn materialize_trajectory(
    scene: &ParsedScene,
    ann: &AnnotationSet,
    plan: &GroupTransformPlan,
    planner: &PlannerConfig,
) -> Trajectory {
    let arms = ann.arm_count;
    let up = plan.plane.axis();
    let eff = plan.effective();
    let src = |t: usize| &scene.demo.frames[t].action;
    let mut actions: Vec<Action> = Vec::new();
    let mut source_frames = Vec::new();
    let mut segments = Vec::new();
    // (segment index, skill index) per output frame
    let mut owner: Vec<(bool, usize)> = Vec::new();

    for i in 0..ann.skill_count() {
        let m = ann.motion_before(i);
        let s = ann.skill(i);
        let starts: Vec<Pose> = match actions.last() {
            Some(a) => a.ee.clone(),
            None => src(0).ee.clone(),
        };
        let goals: Vec<Pose> = src(s.start - 1).ee.iter().map(|p| eff[i].compose(p)).collect();
        let mut n = (0..arms)
            .map(|a| segment_count(&starts[a], &goals[a], &up, planner))
            .max()
            .unwrap_or(1);
        let paths: Vec<Vec<Pose>> = if arms == 2 && s.shared_hand().is_some() {
            let offset = starts[0].inverse().compose(&starts[1]);
            // the follower also swings with the leader's rotation; refine until its steps fit too
            let (left, mut right) = loop {
                let left = plan_path(&starts[0], &goals[0], &up, planner, n);
                let right: Vec<Pose> = left.iter().map(|p| p.compose(&offset)).collect();
                let worst = right
                    .windows(2)
                    .map(|w| (w[1].translation() - w[0].translation()).norm())
                    .fold(0.0, f64::max);
                if worst <= planner.step || n >= 64 * segment_count(&starts[0], &goals[0], &up, planner) {
                    break (left, right);
                }
                n = ((n as f64 * worst / planner.step).ceil() as usize).max(n + 1);
            };
            right[0] = starts[1];
            right[n] = goals[1];
            vec![left, right]
        } else {
            (0..arms)
                .map(|a| plan_path(&starts[a], &goals[a], &up, planner, n))
                .collect()
        };
        let grips: Vec<Vec<Grip>> = (0..arms)
            .map(|a| {
                let source: Vec<Grip> = (m.start - 1..m.end).map(|t| src(t).grip[a]).collect();
                resample_grips(&source, n + 1)
            })
            .collect();
        let m_len = m.len();
        let out_start = actions.len() + 1;
        for j in 0..=n {
            actions.push(Action {
                ee: (0..arms).map(|a| paths[a][j]).collect(),
                grip: (0..arms).map(|a| grips[a][j]).collect(),
            });
            let offset = ((j * (m_len - 1)) as f64 / n as f64).round() as usize;
            source_frames.push(m.start - 1 + offset);
            owner.push((false, i));
        }
        segments.push(Segment::motion(out_start, actions.len()));

        let out_start = actions.len() + 1;
        let slice: Vec<Action> = (s.start - 1..s.end).map(|t| src(t).clone()).collect();
        for (k, a) in augment_skill(&slice, &eff[i]).into_iter().enumerate() {
            actions.push(a);
            source_frames.push(s.start - 1 + k);
            owner.push((true, i));
        }
        segments.push(Segment::skill(out_start, actions.len(), s.target.clone(), s.hands.clone()));
    }

    let arm_deltas: Vec<Vec<Pose>> = actions
        .iter()
        .zip(&source_frames)
        .map(|(a, &s)| {
            a.ee.iter()
                .zip(&src(s).ee)
                .map(|(hat, orig)| hat.compose(&orig.inverse()))
                .collect()
        })
        .collect();

    let skills_of: BTreeMap<u16, Vec<usize>> = scene
        .object_ids()
        .into_iter()
        .map(|id| {
            let v = (0..ann.skill_count())
                .filter(|&i| ann.skill(i).group().contains(&id))
                .collect();
            (id, v)
        })
        .collect();
    let rest = |id: u16, i: usize| -> Pose {
        let list = &skills_of[&id];
        list.iter()
            .rev()
            .find(|&&j| j < i)
            .or_else(|| list.first())
            .map_or_else(Pose::identity, |&j| eff[j])
    };
    let mut object_transforms = BTreeMap::new();
    for id in scene.object_ids() {
        let v: Vec<Pose> = owner
            .iter()
            .enumerate()
            .map(|(t, &(is_skill, i))| {
                let s = ann.skill(i);
                if is_skill {
                    if s.group().contains(&id) {
                        eff[i]
                    } else {
                        rest(id, i)
                    }
                } else {
                    match holding_arm(&s.hands, id) {
                        Some(a) => arm_deltas[t][a],
                        None => rest(id, i),
                    }
                }
            })
            .collect();
        object_transforms.insert(id, v);
    }

    Trajectory {
        actions,
        source_frames,
        segments,
        object_transforms,
        arm_deltas,
    }
}

fn split_arm(cloud: &PointCloud, ees: &[Pose], deltas: &[Pose]) -> PointCloud {
    if deltas.len() == 1 {
        return transform_cloud(cloud, &deltas[0]);
    }
    let centers: Vec<_> = ees.iter().map(|p| p.translation()).collect();
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); deltas.len()];
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let (best, _) = centers
            .iter()
            .enumerate()
            .map(|(a, c)| (a, (p - c).norm_squared()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        parts[best].push(i);
    }
    let moved: Vec<PointCloud> = parts
        .iter()
        .zip(deltas)
        .map(|(idx, d)| transform_cloud(&cloud.select(idx), d))
        .collect();
    PointCloud::concat(moved.iter())
}

/// Per-frame clouds: environment, arm and objects, each moved by its transform.
pub fn observations(scene: &ParsedScene, plan: &GroupTransformPlan, traj: &Trajectory) -> Vec<PointCloud> {
    let env = transform_cloud(&scene.environment.clone().with_label(UNLABELED), &plan.environment);
    (0..traj.horizon())
        .into_par_iter()
        .map(|t| {
            let s = traj.source_frames[t];
            let mut parts = vec![env.clone()];
            parts.push(split_arm(
                &scene.arm[s],
                &scene.demo.frames[s].action.ee,
                &traj.arm_deltas[t],
            ));
            for (id, transforms) in &traj.object_transforms {
                if let Some(c) = scene.object_cloud(*id, s) {
                    parts.push(transform_cloud(&c, &transforms[t]));
                }
            }
            PointCloud::concat(parts.iter())
        })
        .collect()
}

/// Index of one generated demonstration within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoTuple {
    pub index: usize,
    pub replay: usize,
    pub combination: usize,
    pub perturbation: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDemo {
    pub tuple: DemoTuple,
    pub plan: GroupTransformPlan,
    pub demo: Demonstration,
    pub annotation: AnnotationSet,
    /// Rigid object poses per output frame.
    pub object_poses: BTreeMap<u16, Vec<Pose>>,
    /// 1-based source frame per output frame.
    pub source_frames: Vec<usize>,
}

pub fn materialize(
    scene: &ParsedScene,
    ann: &AnnotationSet,
    plan: &GroupTransformPlan,
    planner: &PlannerConfig,
    tuple: DemoTuple,
) -> GeneratedDemo {
    let traj = materialize_trajectory(scene, ann, plan, planner);
    let clouds = observations(scene, plan, &traj);
    let frames = clouds
        .into_iter()
        .zip(&traj.actions)
        .map(|(observation, action)| Frame {
            observation,
            action: action.clone(),
        })
        .collect();
    let mut demo = Demonstration::new(scene.demo.camera, scene.demo.arm_count, frames);
    demo.bypass_labels = scene.templates.iter().filter(|t| !t.rigid).map(|t| t.id).collect();
    let object_poses = scene
        .object_poses
        .iter()
        .map(|(id, src)| {
            let v = traj.object_transforms[id]
                .iter()
                .zip(&traj.source_frames)
                .map(|(tf, &s)| tf.compose(&src[s]))
                .collect();
            (*id, v)
        })
        .collect();
    GeneratedDemo {
        tuple,
        plan: plan.clone(),
        demo,
        annotation: AnnotationSet {
            masks: ann.masks.clone(),
            arm_count: ann.arm_count,
            segments: traj.segments,
        },
        object_poses,
        source_frames: traj.source_frames.iter().map(|s| s + 1).collect(),
    }
}

/// All `(replay, combination, perturbation)` tuples with their plans. Base
/// plans come from `child_seed(seed, n)`; each perturbation draws from
/// `child_seed(base, r·P + p + 1)`.
pub fn plan_batch(ctx: &PlanContext, seed: u64) -> Vec<(DemoTuple, Result<GroupTransformPlan, AugmentError>)> {
    let cfg = ctx.cfg;
    let (rn, nn, pn) = (cfg.replays, cfg.combinations, cfg.perturbations);
    let bases: Vec<(u64, Result<GroupTransformPlan, AugmentError>)> = (0..nn)
        .into_par_iter()
        .map(|n| {
            let base_seed = child_seed(seed, n as u64);
            (base_seed, ctx.sample(base_seed, n))
        })
        .collect();
    let tuples: Vec<DemoTuple> = (0..rn)
        .flat_map(|r| (0..nn).flat_map(move |n| (0..pn).map(move |p| (r, n, p))))
        .map(|(r, n, p)| DemoTuple {
            index: (r * nn + n) * pn + p,
            replay: r,
            combination: n,
            perturbation: p,
            seed: child_seed(bases[n].0, (r * pn + p + 1) as u64),
        })
        .collect();
    tuples
        .into_par_iter()
        .map(|tuple| {
            let plan = match &bases[tuple.combination].1 {
                Ok(base) => ctx.perturb(base, tuple.seed),
                Err(e) => Err(e.clone()),
            };
            (tuple, plan)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub demos: Vec<GeneratedDemo>,
    pub skipped: Vec<(DemoTuple, AugmentError)>,
}

/// Plans and materializes a whole batch (before camera-aware processing).
/// Tuples whose sampling fails are skipped and reported.
pub fn generate(
    scene: &ParsedScene,
    ann: &AnnotationSet,
    sampler: &super::SamplerConfig,
    planner: &PlannerConfig,
    seed: u64,
) -> Result<BatchReport, AugmentError> {
    let ctx = PlanContext::new(scene, ann, sampler)?;
    let mut demos = Vec::new();
    let mut skipped = Vec::new();
    for (tuple, plan) in plan_batch(&ctx, seed) {
        match plan {
            Ok(plan) => demos.push(materialize(scene, ann, &plan, planner, tuple)),
            Err(e) => {
                warn!("demo {} skipped: {e}", tuple.index);
                skipped.push((tuple, e));
            }
        }
    }
    if !skipped.is_empty() {
        warn!(
            "generated {} of {} demonstrations",
            demos.len(),
            demos.len() + skipped.len()
        );
    }
    Ok(BatchReport { demos, skipped })
}

/// Checks that both arms keep a fixed relative pose through every motion that
/// leads into a skill where they hold the same object.
pub fn check_bimanual_constraint(ann: &AnnotationSet, actions: &[Action], tol: f64) -> Result<(), AugmentError> {
    if ann.arm_count != 2 {
        return Ok(());
    }
    for i in 0..ann.skill_count() {
        if ann.skill(i).shared_hand().is_none() {
            continue;
        }
        let m = ann.motion_before(i);
        let rel = |t: usize| {
            let a = &actions[t - 1];
            a.ee[0].inverse().compose(&a.ee[1])
        };
        let r0 = rel(m.start);
        for t in m.start..=m.end {
            let drift = rel(t).max_abs_diff(&r0);
            if drift > tol {
                return Err(AugmentError::ConstraintViolation { frame: t, drift });
            }
        }
    }
    Ok(())
}
