//! Dataset checks for generated demonstrations.
//!
//! Each check compares a generated demo against the source scene and
//! annotation it came from and reports failures with the 1-based skill and
//! frame they concern.

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationSet;
use crate::augment::{check_bimanual_constraint, AugmentError, GeneratedDemo};
use crate::demo::{Action, ParsedScene};
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rigidity: f64,
    pub bimanual: f64,
    /// Position step bound of planned motions, meters.
    pub step: f64,
    pub step_slack: f64,
    /// Grip widths below this count as closed.
    pub grip_closed_below: f32,
    /// Plane preservation of sampled transforms, meters.
    pub plane: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rigidity: 1e-6,
            bimanual: 1e-9,
            step: crate::motion::PlannerConfig::default().step,
            step_slack: 1e-9,
            grip_closed_below: 0.04,
            plane: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub check: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skill: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    pub detail: String,
}

impl Failure {
    fn new(check: &str, skill: Option<usize>, frame: Option<usize>, detail: String) -> Self {
        Failure {
            check: check.to_string(),
            skill,
            frame,
            detail,
        }
    }
}

/// Verdict for one demo; serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub demo: usize,
    pub ok: bool,
    pub failures: Vec<Failure>,
}

fn relative(a: &Pose, b: &Pose) -> Pose {
    a.inverse().compose(b)
}

/// Object poses and end effectors of each skill group, relative to the
/// group's first rigid object, must match the source at skill start.
fn check_rigidity(scene: &ParsedScene, ann: &AnnotationSet, g: &GeneratedDemo, tol: f64, out: &mut Vec<Failure>) {
    for i in 0..ann.skill_count() {
        let src_skill = ann.skill(i);
        let Some(gen_skill) = g.annotation.segments.iter().filter(|s| s.is_skill()).nth(i) else {
            continue;
        };
        let (s0, g0) = (src_skill.start - 1, gen_skill.start - 1);
        let members: Vec<u16> = src_skill
            .group()
            .into_iter()
            .filter(|id| scene.object_poses.contains_key(id))
            .collect();
        let Some(&anchor) = members.first() else {
            continue;
        };
        let (Some(src_anchor), Some(gen_anchor)) = (
            scene.object_poses[&anchor].get(s0),
            g.object_poses.get(&anchor).and_then(|p| p.get(g0)),
        ) else {
            out.push(Failure::new(
                "group_rigidity",
                Some(i + 1),
                Some(gen_skill.start),
                format!("missing pose of object {anchor}"),
            ));
            continue;
        };
        let mut worst = (0.0f64, String::new());
        let mut consider = |what: String, src: Pose, gen: Pose| {
            let (dt, dr) = relative(src_anchor, &src).distance(&relative(gen_anchor, &gen));
            let e = dt.max(dr);
            if e > worst.0 {
                worst = (e, what);
            }
        };
        let mut missing = Vec::new();
        for &k in &members[1..] {
            match g.object_poses.get(&k).and_then(|p| p.get(g0)) {
                Some(p) => consider(format!("object {k}"), scene.object_poses[&k][s0], *p),
                None => missing.push(k),
            }
        }
        let src_ee = &scene.demo.frames[s0].action.ee;
        let gen_ee = &g.demo.frames[g0].action.ee;
        for (a, (s, e)) in src_ee.iter().zip(gen_ee).enumerate() {
            consider(format!("arm {}", a + 1), *s, *e);
        }
        if !missing.is_empty() {
            out.push(Failure::new(
                "group_rigidity",
                Some(i + 1),
                Some(gen_skill.start),
                format!("missing poses of objects {missing:?}"),
            ));
        }
        if worst.0 > tol {
            out.push(Failure::new(
                "group_rigidity",
                Some(i + 1),
                Some(gen_skill.start),
                format!("{} relative to object {anchor} off by {:.3e}", worst.1, worst.0),
            ));
        }
    }
}

fn ee_bits(a: &Action) -> Vec<[u64; 16]> {
    a.ee.iter()
        .map(|p| p.to_row_major().map(f64::to_bits))
        .collect()
}

/// Motions start and end bitwise on the adjacent skill poses and move by at
/// most the step bound.
fn check_continuity(scene: &ParsedScene, g: &GeneratedDemo, tol: &Tolerances, out: &mut Vec<Failure>) {
    let frames = &g.demo.frames;
    let segs = &g.annotation.segments;
    let mut skill = 0;
    for (k, m) in segs.iter().enumerate() {
        if m.is_skill() {
            skill += 1;
            continue;
        }
        let next = skill + 1;
        let first = &frames[m.start - 1].action;
        let expected_start = if k == 0 {
            ee_bits(&scene.demo.frames[0].action)
        } else {
            ee_bits(&frames[segs[k - 1].end - 1].action)
        };
        if ee_bits(first) != expected_start {
            out.push(Failure::new(
                "continuity",
                Some(next),
                Some(m.start),
                "motion does not start on the preceding pose".into(),
            ));
        }
        if let Some(s) = segs.get(k + 1) {
            if ee_bits(&frames[m.end - 1].action) != ee_bits(&frames[s.start - 1].action) {
                out.push(Failure::new(
                    "continuity",
                    Some(next),
                    Some(m.end),
                    "motion does not end on the skill's first pose".into(),
                ));
            }
        }
        for t in m.start..m.end {
            let (a, b) = (&frames[t - 1].action, &frames[t].action);
            for (arm, (p, q)) in a.ee.iter().zip(&b.ee).enumerate() {
                let d = (q.translation() - p.translation()).norm();
                if d > tol.step + tol.step_slack {
                    out.push(Failure::new(
                        "step_bound",
                        Some(next),
                        Some(t + 1),
                        format!("arm {} moves {d:.4} m in one step (bound {})", arm + 1, tol.step),
                    ));
                }
            }
        }
    }
}

/// Sorted (arm, from_closed, to_closed) transitions along `frames`.
fn transitions(frames: impl Iterator<Item = Action>, closed_below: f32) -> Vec<(usize, bool, bool)> {
    let states: Vec<Vec<bool>> = frames
        .map(|a| a.grip.iter().map(|g| g.is_closed(closed_below)).collect())
        .collect();
    let mut out = Vec::new();
    for w in states.windows(2) {
        for (arm, (x, y)) in w[0].iter().zip(&w[1]).enumerate() {
            if x != y {
                out.push((arm, *x, *y));
            }
        }
    }
    out.sort();
    out
}

fn check_grips(scene: &ParsedScene, ann: &AnnotationSet, g: &GeneratedDemo, tol: &Tolerances, out: &mut Vec<Failure>) {
    let gen_skills: Vec<_> = g.annotation.segments.iter().filter(|s| s.is_skill()).collect();
    for (i, gs) in gen_skills.iter().enumerate() {
        let ss = ann.skill(i);
        let src = transitions(
            (ss.start - 1..ss.end).map(|t| scene.demo.frames[t].action.clone()),
            tol.grip_closed_below,
        );
        let gen = transitions(
            (gs.start - 1..gs.end).map(|t| g.demo.frames[t].action.clone()),
            tol.grip_closed_below,
        );
        if src != gen {
            out.push(Failure::new(
                "grip_transitions",
                Some(i + 1),
                Some(gs.start),
                format!("{} transitions, source has {}", gen.len(), src.len()),
            ));
        }
    }
}

fn check_plane(g: &GeneratedDemo, tol: f64, out: &mut Vec<Failure>) {
    let frame = g.plan.plane.frame();
    let probes = [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [-0.3, 0.4]];
    let mut check = |skill: Option<usize>, t: &Pose| {
        let worst = probes
            .iter()
            .map(|q| {
                let p = frame.from_plane(&nalgebra::Vector2::new(q[0], q[1]));
                g.plan.plane.signed_distance(&t.transform_point(&p)).abs()
            })
            .fold(0.0, f64::max);
        if worst > tol {
            out.push(Failure::new(
                "plane_preservation",
                skill,
                None,
                format!("transform lifts the table by {worst:.3e} m"),
            ));
        }
    };
    for s in &g.plan.skills {
        check(Some(s.skill + 1), &s.transform);
        check(Some(s.skill + 1), &s.effective);
    }
    check(None, &g.plan.environment);
}

/// Runs every check on one generated demo.
pub fn validate_demo(scene: &ParsedScene, ann: &AnnotationSet, g: &GeneratedDemo, tol: &Tolerances) -> DemoReport {
    let mut failures = Vec::new();
    if let Err(e) = g.demo.validate() {
        failures.push(Failure::new("demo_invariants", None, None, e.to_string()));
    }
    let gen_skills = g.annotation.segments.iter().filter(|s| s.is_skill()).count();
    if gen_skills != ann.skill_count() {
        failures.push(Failure::new(
            "annotation",
            None,
            None,
            format!("{gen_skills} skills, source has {}", ann.skill_count()),
        ));
    } else if g.annotation.horizon() != g.demo.horizon() {
        failures.push(Failure::new(
            "annotation",
            None,
            None,
            format!("segments end at {}, demo has {} frames", g.annotation.horizon(), g.demo.horizon()),
        ));
    } else {
        check_rigidity(scene, ann, g, tol.rigidity, &mut failures);
        check_continuity(scene, g, tol, &mut failures);
        check_grips(scene, ann, g, tol, &mut failures);
        if g.demo.arm_count == 2 {
            let actions = g.demo.actions();
            if let Err(AugmentError::ConstraintViolation { frame, drift }) =
                check_bimanual_constraint(&g.annotation, &actions, tol.bimanual)
            {
                let skill = g
                    .annotation
                    .segments
                    .iter()
                    .filter(|s| s.is_skill())
                    .position(|s| s.start > frame)
                    .map(|i| i + 1);
                failures.push(Failure::new(
                    "bimanual",
                    skill,
                    Some(frame),
                    format!("relative arm pose drifts by {drift:.3e}"),
                ));
            }
        }
    }
    check_plane(g, tol.plane, &mut failures);
    DemoReport {
        demo: g.tuple.index,
        ok: failures.is_empty(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{materialize, DemoTuple, PlanContext, SamplerConfig};
    use crate::demo::Grip;
    use crate::motion::PlannerConfig;
    use crate::testutil::{parsed, BRIDGE};

    fn checks(r: &DemoReport) -> Vec<&str> {
        r.failures.iter().map(|f| f.check.as_str()).collect()
    }

    #[test]
    fn clean_demo_passes_and_faults_are_named() {
        let (_, scene, ann) = parsed(BRIDGE, 3);
        let cfg = SamplerConfig::default();
        let plan = PlanContext::new(&scene, &ann, &cfg).unwrap().sample(1, 0).unwrap();
        let tuple = DemoTuple {
            index: 4,
            replay: 0,
            combination: 0,
            perturbation: 0,
            seed: 1,
        };
        let g = materialize(&scene, &ann, &plan, &PlannerConfig::default(), tuple);
        let tol = Tolerances::default();
        let ok = validate_demo(&scene, &ann, &g, &tol);
        assert!(ok.ok, "{:?}", ok.failures);
        assert_eq!(ok.demo, 4);

        // nudge the deck at the start of the last skill
        let mut bad = g.clone();
        let last = bad.annotation.segments.last().unwrap().start;
        let p = &mut bad.object_poses.get_mut(&3).unwrap()[last - 1];
        *p = Pose::from_translation(0.0, 0.001, 0.0).compose(p);
        let r = validate_demo(&scene, &ann, &bad, &tol);
        assert_eq!(checks(&r), ["group_rigidity"]);
        assert_eq!(r.failures[0].skill, Some(6));

        // a jump in the middle of a motion
        let mut bad = g.clone();
        let m = bad.annotation.segments[2].clone();
        let mid = (m.start + m.end) / 2;
        let a = &mut bad.demo.frames[mid - 1].action.ee[0];
        *a = Pose::from_translation(0.05, 0.0, 0.0).compose(a);
        assert!(checks(&validate_demo(&scene, &ann, &bad, &tol)).contains(&"step_bound"));

        // a grip that never closes
        let mut bad = g.clone();
        let s = bad.annotation.segments[1].clone();
        for t in s.start..=s.end {
            bad.demo.frames[t - 1].action.grip[0] = Grip::new(0.08);
        }
        let r = validate_demo(&scene, &ann, &bad, &tol);
        assert!(checks(&r).contains(&"grip_transitions"), "{:?}", r.failures);
    }
}
