//! Procedural tabletop scenes with known geometry.
//!
//! A scene spec lists box and cylinder objects on a table, a camera looking
//! down at the table, and a schedule of motions and skills (grasp, place,
//! touch). [`make_scene`] scripts the end-effector trajectory, renders every
//! frame with a point z-buffer and emits the raw demonstration together with
//! tracking outputs, templates, the annotation and ground-truth depth.

mod output;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, IdSet, Segment};
use crate::augment::footprint::{convex_hull, polygon_distance};
use crate::camera::CameraModel;
use crate::cloud::{PointCloud, UNLABELED};
use crate::demo::{Action, Demonstration, Frame, Grip, ObjectTemplate, TrackingInput};
use crate::pose::Pose;

pub use output::{reload_synth, save_synth};
pub use render::{render_reference, zbuffer_render, Configuration, SynthWorld};
use render::{arm_template, render_with_depth, rng, Sampler, ARM_RADIUS, ARM_SPAN};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("SpecError: {0}")]
    Invalid(String),
    #[error("SpecError: objects {0} and {1} overlap")]
    Overlap(u16, u16),
    #[error("SpecError: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> SpecError {
    SpecError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_depth_min")]
    pub depth_min: f64,
    #[serde(default = "default_depth_max")]
    pub depth_max: f64,
    /// Height of the optical center above the table, meters.
    pub mount_height: f64,
    /// Downward tilt of the optical axis from horizontal, degrees.
    pub pitch_deg: f64,
}

fn default_depth_min() -> f64 {
    0.1
}

fn default_depth_max() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub half_x: f64,
    pub half_y: f64,
    pub color: [u8; 3],
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            half_x: 1.5,
            half_y: 1.5,
            color: [150, 140, 120],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    pub fn height(&self) -> f64 {
        match self {
            Shape::Box { size } => size[2],
            Shape::Cylinder { height, .. } => *height,
        }
    }

    fn half_width(&self) -> f64 {
        match self {
            Shape::Box { size } => size[0] / 2.0,
            Shape::Cylinder { radius, .. } => *radius,
        }
    }

    fn outline(&self) -> Vec<Vector2<f64>> {
        match self {
            Shape::Box { size } => {
                let (x, y) = (size[0] / 2.0, size[1] / 2.0);
                vec![
                    Vector2::new(-x, -y),
                    Vector2::new(x, -y),
                    Vector2::new(x, y),
                    Vector2::new(-x, y),
                ]
            }
            Shape::Cylinder { radius, .. } => (0..16)
                .map(|i| {
                    let a = i as f64 / 16.0 * std::f64::consts::TAU;
                    Vector2::new(radius * a.cos(), radius * a.sin())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u16,
    #[serde(flatten)]
    pub shape: Shape,
    /// Table position of the base center, meters.
    pub at: [f64; 2],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default = "yes")]
    pub rigid: bool,
    #[serde(default = "default_color")]
    pub color: [u8; 3],
}

fn yes() -> bool {
    true
}

fn default_color() -> [u8; 3] {
    [200, 60, 50]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmChoice {
    #[default]
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Step {
    Motion {
        frames: usize,
    },
    Grasp {
        object: u16,
        frames: usize,
        #[serde(default)]
        arm: ArmChoice,
    },
    Place {
        object: u16,
        frames: usize,
        /// Objects to stack onto; their tops support the placed object.
        #[serde(default)]
        onto: Vec<u16>,
        /// Table position when not stacking.
        #[serde(default)]
        at: Option<[f64; 2]>,
        #[serde(default)]
        yaw_deg: Option<f64>,
        #[serde(default)]
        arm: ArmChoice,
    },
    /// Reach down to the top of each listed object and back without grasping.
    Touch {
        objects: Vec<u16>,
        frames: usize,
        #[serde(default)]
        arm: ArmChoice,
    },
}

impl Step {
    fn frames(&self) -> usize {
        match self {
            Step::Motion { frames }
            | Step::Grasp { frames, .. }
            | Step::Place { frames, .. }
            | Step::Touch { frames, .. } => *frames,
        }
    }

    fn arm(&self) -> ArmChoice {
        match self {
            Step::Motion { .. } => ArmChoice::Left,
            Step::Grasp { arm, .. } | Step::Place { arm, .. } | Step::Touch { arm, .. } => *arm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub camera: CameraSpec,
    #[serde(default)]
    pub table: TableSpec,
    /// Surface samples per pixel footprint.
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "one")]
    pub arms: usize,
    pub objects: Vec<ObjectSpec>,
    pub schedule: Vec<Step>,
}

fn default_density() -> f64 {
    4.0
}

fn one() -> usize {
    1
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|e| SpecError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn camera_model(&self) -> CameraModel {
        let c = &self.camera;
        CameraModel {
            fx: c.fx,
            fy: c.fy,
            cx: c.width as f64 / 2.0,
            cy: c.height as f64 / 2.0,
            width: c.width,
            height: c.height,
            depth_min: c.depth_min,
            depth_max: c.depth_max,
        }
    }

    /// World (table frame, +Z up, origin where the optical axis meets the
    /// table) to camera transform.
    pub fn world_to_camera(&self) -> Pose {
        let pitch = self.camera.pitch_deg.to_radians();
        let h = self.camera.mount_height;
        let center = Vector3::new(0.0, -h / pitch.tan(), h);
        let forward = (-center).normalize();
        let right = Vector3::x();
        let down = forward.cross(&right);
        let r = Rotation3::from_basis_unchecked(&[right, down, forward]);
        Pose::from_parts(&r, center).inverse()
    }

    fn object(&self, id: u16) -> Result<&ObjectSpec, SpecError> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| invalid(format!("unknown object {id}")))
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        self.camera_model()
            .validate()
            .map_err(|e| invalid(format!("camera: {e}")))?;
        if !(1..=2).contains(&self.arms) {
            return Err(invalid(format!("arms must be 1 or 2, got {}", self.arms)));
        }
        if !(self.camera.pitch_deg > 0.0 && self.camera.pitch_deg <= 90.0) || self.camera.mount_height <= 0.0 {
            return Err(invalid("camera must look down at the table from above"));
        }
        if self.density <= 0.0 {
            return Err(invalid("density must be positive"));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 || o.id == u16::MAX || !ids.insert(o.id) {
                return Err(invalid(format!("object id {} is reserved or repeated", o.id)));
            }
        }
        let hulls: Vec<(u16, Vec<Vector2<f64>>)> = self
            .objects
            .iter()
            .map(|o| (o.id, footprint(o, &initial_pose(o))))
            .collect();
        for (i, (a, ha)) in hulls.iter().enumerate() {
            for (b, hb) in &hulls[i + 1..] {
                if polygon_distance(ha, hb) <= 0.0 {
                    return Err(SpecError::Overlap(*a, *b));
                }
            }
        }
        if self.schedule.is_empty() || self.schedule.len() % 2 != 0 {
            return Err(invalid("schedule must alternate motion and skill, ending with a skill"));
        }
        for (i, step) in self.schedule.iter().enumerate() {
            let is_motion = matches!(step, Step::Motion { .. });
            if is_motion != (i % 2 == 0) {
                return Err(invalid(format!("schedule entry {} breaks motion/skill alternation", i + 1)));
            }
            let min = if is_motion { 1 } else { 3 };
            if step.frames() < min {
                return Err(invalid(format!("schedule entry {} needs at least {min} frames", i + 1)));
            }
            if self.arms == 1 && step.arm() != ArmChoice::Left {
                return Err(invalid(format!("schedule entry {} names a second arm", i + 1)));
            }
        }
        Ok(())
    }
}

fn initial_pose(o: &ObjectSpec) -> Pose {
    Pose::from_parts(
        &Rotation3::from_axis_angle(&Vector3::z_axis(), o.yaw_deg.to_radians()),
        Vector3::new(o.at[0], o.at[1], 0.0),
    )
}

fn footprint(o: &ObjectSpec, pose: &Pose) -> Vec<Vector2<f64>> {
    let pts: Vec<Vector2<f64>> = o
        .shape
        .outline()
        .iter()
        .map(|q| {
            let p = pose.transform_point(&Vector3::new(q.x, q.y, 0.0));
            Vector2::new(p.x, p.y)
        })
        .collect();
    convex_hull(&pts)
}

const OPEN: f32 = 0.08;
const CLOSED: f32 = 0.0;
const APPROACH: f64 = 0.06;
const GRASP_DEPTH: f64 = 0.015;

/// End effector pointing down (+Z of the gripper = world -Z) with the given yaw.
fn downward(position: Vector3<f64>, yaw: f64) -> Pose {
    let x = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let z = -Vector3::z();
    let y = z.cross(&x);
    Pose::from_parts(&Rotation3::from_basis_unchecked(&[x, y, z]), position)
}

fn lift(p: &Pose, dz: f64) -> Pose {
    Pose::from_translation(0.0, 0.0, dz).compose(p)
}

fn interpolate(a: &Pose, b: &Pose, f: f64) -> Pose {
    let q = a.quaternion().slerp(&b.quaternion(), f);
    let t = a.translation() * (1.0 - f) + b.translation() * f;
    Pose::from_parts(&q.to_rotation_matrix(), t)
}

fn yaw_of(p: &Pose) -> f64 {
    let x = p.rotation_matrix().column(0).into_owned();
    x.y.atan2(x.x)
}

struct Held {
    /// Holding arms with the object pose in each end-effector frame.
    arms: Vec<(usize, Pose)>,
}

struct Sim<'a> {
    spec: &'a SceneSpec,
    ee: Vec<Pose>,
    grip: Vec<Grip>,
    /// World poses of objects not currently held.
    objects: BTreeMap<u16, Pose>,
    held: BTreeMap<u16, Held>,
    frames: Vec<(Vec<Pose>, Vec<Grip>, BTreeMap<u16, Pose>)>,
    segments: Vec<Segment>,
}

impl Sim<'_> {
    fn arms_of(&self, choice: ArmChoice) -> Vec<usize> {
        match (self.spec.arms, choice) {
            (1, _) | (_, ArmChoice::Left) => vec![0],
            (_, ArmChoice::Right) => vec![1],
            _ => vec![0, 1],
        }
    }

    fn object_pose(&self, id: u16) -> Pose {
        match self.held.get(&id) {
            Some(h) => {
                let (arm, rel) = h.arms[0];
                self.ee[arm].compose(&rel)
            }
            None => self.objects[&id],
        }
    }

    /// Arms rigidly coupled through a shared object: the follower's pose
    /// relative to the leader, captured when the object was grasped.
    fn couplings(&self) -> Vec<(usize, usize, Pose)> {
        self.held
            .values()
            .filter(|h| h.arms.len() == 2)
            .map(|h| {
                let (a, ra) = h.arms[0];
                let (b, rb) = h.arms[1];
                (a, b, ra.compose(&rb.inverse()))
            })
            .collect()
    }

    fn set_ee(&mut self, poses: Vec<Pose>) {
        self.ee = poses;
        for (a, b, off) in self.couplings() {
            self.ee[b] = self.ee[a].compose(&off);
        }
    }

    fn record(&mut self) {
        let objects = self
            .objects
            .keys()
            .chain(self.held.keys())
            .map(|&id| (id, self.object_pose(id)))
            .collect();
        self.frames.push((self.ee.clone(), self.grip.clone(), objects));
    }

    fn hands(&self) -> Vec<IdSet> {
        let mut hands = vec![IdSet::new(); self.spec.arms];
        for (id, h) in &self.held {
            for (arm, _) in &h.arms {
                hands[*arm].insert(*id);
            }
        }
        hands
    }

    fn top(&self, id: u16) -> Result<f64, SpecError> {
        Ok(self.object_pose(id).translation().z + self.spec.object(id)?.shape.height())
    }

    /// Lowest end-effector poses of a skill, for each involved arm.
    fn skill_goals(&self, step: &Step) -> Result<(Vec<usize>, Vec<Pose>), SpecError> {
        match step {
            Step::Grasp { object, arm, .. } => {
                if self.held.contains_key(object) {
                    return Err(invalid(format!("object {object} is already held")));
                }
                let arms = self.arms_of(*arm);
                let o = self.object_pose(*object);
                let spec = self.spec.object(*object)?;
                let z = spec.shape.height() - GRASP_DEPTH;
                let hw = spec.shape.half_width();
                let yaw = yaw_of(&o);
                let goals = arms
                    .iter()
                    .map(|&a| {
                        let dx = match arms.len() {
                            1 => 0.0,
                            _ if a == 0 => -hw,
                            _ => hw,
                        };
                        downward(o.transform_point(&Vector3::new(dx, 0.0, z)), yaw)
                    })
                    .collect();
                Ok((arms, goals))
            }
            Step::Place {
                object, onto, at, yaw_deg, ..
            } => {
                let held = self
                    .held
                    .get(object)
                    .ok_or_else(|| invalid(format!("object {object} is placed without being held")))?;
                let dest = self.destination(*object, onto, at, yaw_deg)?;
                let arms: Vec<usize> = held.arms.iter().map(|(a, _)| *a).collect();
                let goals = held.arms.iter().map(|(_, rel)| dest.compose(&rel.inverse())).collect();
                Ok((arms, goals))
            }
            Step::Touch { objects, arm, .. } => {
                if objects.is_empty() {
                    return Err(invalid("touch needs at least one object"));
                }
                let mut c = Vector3::zeros();
                let mut top: f64 = 0.0;
                for id in objects {
                    c += self.object_pose(*id).translation();
                    top = top.max(self.top(*id)?);
                }
                c /= objects.len() as f64;
                let arms = self.arms_of(*arm);
                let goals = arms
                    .iter()
                    .map(|&a| downward(Vector3::new(c.x, c.y, top + 0.01), yaw_of(&self.ee[a])))
                    .collect();
                Ok((arms, goals))
            }
            Step::Motion { .. } => unreachable!("motions have no goal"),
        }
    }

    fn destination(&self, id: u16, onto: &[u16], at: &Option<[f64; 2]>, yaw_deg: &Option<f64>) -> Result<Pose, SpecError> {
        let yaw = match yaw_deg {
            Some(d) => d.to_radians(),
            None => yaw_of(&self.object_pose(id)),
        };
        let (x, y, z) = if !onto.is_empty() {
            let mut c = Vector3::zeros();
            let mut z: f64 = 0.0;
            for m in onto {
                if *m == id || self.held.contains_key(m) {
                    return Err(invalid(format!("cannot stack object {id} onto {m}")));
                }
                c += self.object_pose(*m).translation();
                z = z.max(self.top(*m)?);
            }
            c /= onto.len() as f64;
            (c.x, c.y, z)
        } else if let Some([x, y]) = at {
            (*x, *y, 0.0)
        } else {
            return Err(invalid(format!("place of object {id} needs \"onto\" or \"at\"")));
        };
        Ok(Pose::from_parts(
            &Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            Vector3::new(x, y, z),
        ))
    }

    fn run_pair(&mut self, motion_frames: usize, step: &Step) -> Result<(), SpecError> {
        let (arms, bottoms) = self.skill_goals(step)?;
        let mut pre = self.ee.clone();
        let mut bottom = self.ee.clone();
        for (a, b) in arms.iter().zip(&bottoms) {
            pre[*a] = lift(b, APPROACH);
            bottom[*a] = *b;
        }
        let start = self.ee.clone();
        let first = self.frames.len() + 1;
        for k in 0..motion_frames {
            let f = (k + 1) as f64 / (motion_frames + 1) as f64;
            let poses = start.iter().zip(&pre).map(|(a, b)| interpolate(a, b, f)).collect();
            self.set_ee(poses);
            self.record();
        }
        self.segments.push(Segment::motion(first, self.frames.len()));

        let target: IdSet = match step {
            Step::Grasp { object, .. } => [*object].into(),
            Step::Place { onto, .. } => onto.iter().copied().collect(),
            Step::Touch { objects, .. } => objects.iter().copied().collect(),
            Step::Motion { .. } => IdSet::new(),
        };
        let hands = self.hands();
        let first = self.frames.len() + 1;
        let n = step.frames();
        let h = (n - 1) / 2;
        for k in 0..n {
            let poses = if k <= h {
                let f = if h == 0 { 1.0 } else { k as f64 / h as f64 };
                pre.iter().zip(&bottom).map(|(a, b)| interpolate(a, b, f)).collect()
            } else {
                let f = (k - h) as f64 / (n - 1 - h) as f64;
                bottom.iter().zip(&pre).map(|(a, b)| interpolate(a, b, f)).collect()
            };
            self.set_ee(poses);
            if k == h {
                match step {
                    Step::Grasp { object, .. } => {
                        let o = self.objects.remove(object).expect("resting object");
                        let held = arms.iter().map(|&a| (a, self.ee[a].inverse().compose(&o))).collect();
                        self.held.insert(*object, Held { arms: held });
                        for &a in &arms {
                            self.grip[a] = Grip::new(CLOSED);
                        }
                    }
                    Step::Place {
                        object, onto, at, yaw_deg, ..
                    } => {
                        let dest = self.destination(*object, onto, at, yaw_deg)?;
                        self.held.remove(object);
                        self.objects.insert(*object, dest);
                        for &a in &arms {
                            self.grip[a] = Grip::new(OPEN);
                        }
                    }
                    _ => {}
                }
            }
            self.record();
        }
        self.segments.push(Segment::skill(first, self.frames.len(), target, hands));
        Ok(())
    }
}

fn home_poses(arms: usize) -> Vec<Pose> {
    match arms {
        1 => vec![downward(Vector3::new(0.0, -0.2, 0.35), 0.0)],
        _ => vec![
            downward(Vector3::new(-0.2, -0.2, 0.35), 0.0),
            downward(Vector3::new(0.2, -0.2, 0.35), 0.0),
        ],
    }
}

/// Everything [`make_scene`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    /// Raw captures and actions.
    pub demo: Demonstration,
    pub tracking: TrackingInput,
    pub templates: Vec<ObjectTemplate>,
    pub annotation: AnnotationSet,
    /// Ground-truth depth per frame, row-major, 0 where nothing was seen.
    pub depth: Vec<Vec<f32>>,
    pub world: SynthWorld,
}

impl SynthScene {
    /// Source configuration at 0-based frame `t`.
    pub fn configuration(&self, t: usize) -> Configuration {
        Configuration {
            environment: Pose::identity(),
            objects: self.tracking.poses.iter().map(|(id, p)| (*id, p[t])).collect(),
            arms: self.demo.frames[t].action.ee.clone(),
            with_table: true,
        }
    }
}

/// Camera ray through pixel `(u, v)` in world coordinates, scaled so that its
/// camera-frame depth component is 1.
fn pixel_ray(cam: &CameraModel, cam_to_world: &Pose, u: f64, v: f64) -> Vector3<f64> {
    cam_to_world.transform_vector(&Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0))
}

/// Table samples covering the view plus `margin` on every side.
fn sample_table(spec: &SceneSpec, cam: &CameraModel, w2c: &Pose, rng: &mut rand_chacha::ChaCha8Rng) -> (PointCloud, f64) {
    let c2w = w2c.inverse();
    let center = c2w.translation();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut border = Vec::new();
    for i in 0..=16 {
        let s = i as f64 / 16.0;
        border.extend([(s * w, 0.0), (s * w, h), (0.0, s * h), (w, s * h)]);
    }
    let mut near = f64::INFINITY;
    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    for (u, v) in border {
        let d = pixel_ray(cam, &c2w, u, v);
        let depth = if d.z < 0.0 {
            (-center.z / d.z).min(cam.depth_max)
        } else {
            cam.depth_max
        };
        if d.z < 0.0 && -center.z / d.z <= cam.depth_max {
            near = near.min(depth);
        }
        let p = center + d * depth;
        lo = lo.inf(&p.xy());
        hi = hi.sup(&p.xy());
    }
    // the point below the camera can be nearer than any border ray
    near = near.min(center.z);
    let margin = 0.3;
    let t = &spec.table;
    let x0 = (lo.x - margin).max(-t.half_x);
    let x1 = (hi.x + margin).min(t.half_x);
    let y0 = (lo.y - margin).max(-t.half_y);
    let y1 = (hi.y + margin).min(t.half_y);
    let spacing = near / (cam.fx.max(cam.fy) * spec.density.sqrt());
    let mut s = Sampler::new(spacing, rng);
    if x1 > x0 && y1 > y0 {
        s.rect(
            Vector3::new(x0, y0, 0.0),
            Vector3::x() * (x1 - x0),
            Vector3::y() * (y1 - y0),
            t.color,
            UNLABELED,
        );
    }
    (crate::cloud::transform_cloud(&s.finish(), w2c), spacing)
}

/// Scripts, renders and annotates the scene described by `spec`.
pub fn make_scene(spec: &SceneSpec, seed: u64) -> Result<SynthScene, SpecError> {
    spec.validate()?;
    let cam = spec.camera_model();
    let w2c = spec.world_to_camera();
    let mut rng = rng(seed);
    let (table, _) = sample_table(spec, &cam, &w2c, &mut rng);

    let c2w = w2c.inverse();
    let eye = c2w.translation();
    let near = spec
        .objects
        .iter()
        .map(|o| {
            let c = Vector3::new(o.at[0], o.at[1], 0.0);
            let radius = o.shape.half_width().hypot(o.shape.height()) + APPROACH + 0.1;
            (c - eye).norm() - radius
        })
        .fold(eye.z, f64::min)
        .max(0.15);
    let spacing = near / (cam.fx.max(cam.fy) * spec.density.sqrt());
    let mut templates = BTreeMap::new();
    let mut object_templates = Vec::new();
    for o in &spec.objects {
        let mut s = Sampler::new(spacing, &mut rng);
        match o.shape {
            Shape::Box { size } => s.cuboid(size, o.color, o.id),
            Shape::Cylinder { radius, height } => s.cylinder(radius, 0.0, height, o.color, o.id),
        }
        let cloud = s.finish();
        object_templates.push(ObjectTemplate {
            id: o.id,
            cloud: cloud.clone(),
            rigid: o.rigid,
        });
        templates.insert(o.id, cloud);
    }
    let mut sim = Sim {
        spec,
        ee: home_poses(spec.arms),
        grip: vec![Grip::new(OPEN); spec.arms],
        objects: spec.objects.iter().map(|o| (o.id, initial_pose(o))).collect(),
        held: BTreeMap::new(),
        frames: Vec::new(),
        segments: Vec::new(),
    };
    for pair in spec.schedule.chunks(2) {
        let Step::Motion { frames } = pair[0] else {
            unreachable!("validated alternation")
        };
        sim.run_pair(frames, &pair[1])?;
    }

    // the arm can come much closer to the camera than any object
    let arm_near = sim
        .frames
        .iter()
        .flat_map(|(ee, ..)| ee.iter())
        .flat_map(|p| {
            (0..=16).map(move |k| {
                let z = ARM_SPAN[0] + (ARM_SPAN[1] - ARM_SPAN[0]) * k as f64 / 16.0;
                (p.transform_point(&Vector3::new(0.0, 0.0, z)) - eye).norm() - ARM_RADIUS
            })
        })
        .fold(near, f64::min)
        .max(cam.depth_min);
    let arm = arm_template(arm_near / (cam.fx.max(cam.fy) * spec.density.sqrt()), &mut rng);
    let world = SynthWorld {
        camera: cam,
        world_to_camera: w2c,
        table,
        templates,
        arm,
        spacing,
    };

    let rigid: BTreeSet<u16> = spec.objects.iter().filter(|o| o.rigid).map(|o| o.id).collect();
    let mut tracking = TrackingInput {
        environment: strip_labels(
            render_with_depth(
                &world,
                &Configuration {
                    with_table: true,
                    ..Default::default()
                },
                &cam,
            )
            .0,
        ),
        ..Default::default()
    };
    let mut frames = Vec::with_capacity(sim.frames.len());
    let mut depth = Vec::with_capacity(sim.frames.len());
    for (ee, grip, objects) in &sim.frames {
        let config = Configuration {
            environment: Pose::identity(),
            objects: objects.iter().map(|(id, p)| (*id, w2c.compose(p))).collect(),
            arms: ee.iter().map(|p| w2c.compose(p)).collect(),
            with_table: true,
        };
        let (cloud, d) = render_with_depth(&world, &config, &cam);
        for (id, pose) in &config.objects {
            if rigid.contains(id) {
                tracking.poses.entry(*id).or_default().push(*pose);
            } else {
                let idx: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.label(i) == *id).collect();
                tracking.nonrigid.entry(*id).or_default().push(strip_labels(cloud.select(&idx)));
            }
        }
        frames.push(Frame {
            observation: strip_labels(cloud),
            action: Action {
                ee: config.arms.clone(),
                grip: grip.clone(),
            },
        });
        depth.push(d);
    }
    let demo = Demonstration::new(cam, spec.arms, frames);
    demo.validate().map_err(|e| invalid(format!("rendered demonstration is invalid: {e}")))?;
    let mut masks = vec!["mask_gripper.png".to_string()];
    masks.extend(spec.objects.iter().map(|o| format!("mask_obj{}.png", o.id)));
    let annotation = AnnotationSet {
        masks,
        arm_count: spec.arms,
        segments: sim.segments,
    };
    Ok(SynthScene {
        demo,
        tracking,
        templates: object_templates,
        annotation,
        depth,
        world,
    })
}

fn strip_labels(mut c: PointCloud) -> PointCloud {
    c.labels = None;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    const PICK_PLACE: &str = include_str!("../../../../scenes/pick_place.toml");

    fn one_box(at_second: Option<[f64; 2]>) -> String {
        let mut s = String::from(
            "[camera]\nfx = 150.0\nfy = 150.0\nwidth = 160\nheight = 120\nmount_height = 0.8\npitch_deg = 75.0\n\
             [[objects]]\nid = 1\nshape = \"box\"\nsize = [0.06, 0.06, 0.08]\nat = [0.0, 0.0]\nyaw_deg = 30.0\n",
        );
        if let Some(at) = at_second {
            s += &format!("[[objects]]\nid = 2\nshape = \"box\"\nsize = [0.06, 0.06, 0.08]\nat = [{}, {}]\n", at[0], at[1]);
        }
        s + "[[schedule]]\nkind = \"motion\"\nframes = 1\n[[schedule]]\nkind = \"touch\"\nobjects = [1]\nframes = 3\n"
    }

    #[test]
    fn box_shows_only_faces_turned_to_the_camera() {
        let spec = SceneSpec::from_toml(&one_box(None)).unwrap();
        let scene = make_scene(&spec, 3).unwrap();
        let config = Configuration {
            arms: Vec::new(),
            with_table: false,
            ..scene.configuration(0)
        };
        let cloud = render_reference(&scene.world, &config, &scene.world.camera);
        assert!(cloud.len() > 100);
        let pose = config.objects[&1];
        let inv = pose.inverse();
        let (hx, hy, hz) = (0.03, 0.03, 0.08);
        let faces = [
            (Vector3::x(), 0usize, hx),
            (-Vector3::x(), 0, -hx),
            (Vector3::y(), 1, hy),
            (-Vector3::y(), 1, -hy),
            (Vector3::z(), 2, hz),
            (-Vector3::z(), 2, 0.0),
        ];
        let mut seen = [false; 6];
        let mut back = 0usize;
        for i in 0..cloud.len() {
            let p = cloud.point(i);
            let q = inv.transform_point(&p);
            let on: Vec<usize> = (0..6).filter(|&f| (q[faces[f].1] - faces[f].2).abs() < 1e-4).collect();
            assert!(!on.is_empty(), "point {q:?} is off the box surface");
            // camera at the origin: a face is visible when its normal points back at it
            let front = on.iter().any(|&f| pose.transform_vector(&faces[f].0).dot(&-p) > 0.0);
            if !front {
                // silhouette pixels no front sample landed in
                back += 1;
                assert!(q.z > hz - 2.0 * scene.world.spacing, "point {q:?} lies deep on a back face");
                continue;
            }
            for f in on {
                seen[f] = true;
            }
        }
        assert!(back * 20 <= cloud.len(), "{back} of {} points on back faces", cloud.len());
        assert!(!seen[5], "bottom face rendered");
        assert!(seen[4], "top face missing");
    }

    #[test]
    fn pick_and_place_annotation_follows_the_schedule() {
        let scene = make_scene(&SceneSpec::from_toml(PICK_PLACE).unwrap(), 1).unwrap();
        let a = &scene.annotation;
        let kinds: Vec<bool> = a.segments.iter().map(|s| s.is_skill()).collect();
        assert_eq!(kinds, [false, true, false, true]);
        let bounds: Vec<(usize, usize)> = a.segments.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(bounds, [(1, 8), (9, 15), (16, 23), (24, 30)]);
        assert!(a.skill(0).target.contains(&1));
        assert!(a.skill(1).in_hand().contains(&1));
        assert_eq!(scene.demo.horizon(), 30);
        assert_eq!(scene.depth.len(), 30);
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::from_toml(PICK_PLACE).unwrap();
        assert_eq!(make_scene(&spec, 9).unwrap(), make_scene(&spec, 9).unwrap());
    }

    #[test]
    fn overlapping_objects_rejected() {
        let spec = SceneSpec::from_toml(&one_box(Some([0.03, 0.0]))).unwrap();
        assert_eq!(make_scene(&spec, 0).unwrap_err(), SpecError::Overlap(1, 2));
        let apart = SceneSpec::from_toml(&one_box(Some([0.2, 0.0]))).unwrap();
        assert!(apart.validate().is_ok());
    }

    fn tiny_world(table: PointCloud) -> SynthWorld {
        SynthWorld {
            camera: CameraModel {
                fx: 10.0,
                fy: 10.0,
                cx: 4.0,
                cy: 3.0,
                width: 8,
                height: 6,
                depth_min: 0.1,
                depth_max: 5.0,
            },
            world_to_camera: Pose::identity(),
            table,
            templates: BTreeMap::new(),
            arm: PointCloud::default(),
            spacing: 0.01,
        }
    }

    #[test]
    fn empty_world_renders_nothing() {
        let w = tiny_world(PointCloud::default());
        let config = Configuration {
            with_table: true,
            ..Default::default()
        };
        assert!(render_reference(&w, &config, &w.camera).is_empty());
    }

    #[test]
    fn plane_at_unit_depth_fills_every_pixel() {
        let mut pts = Vec::new();
        for i in 0..100 {
            for j in 0..80 {
                pts.push([-0.5 + i as f32 * 0.01 + 0.005, -0.4 + j as f32 * 0.01 + 0.005, 1.0]);
            }
        }
        let w = tiny_world(PointCloud::new(pts));
        let config = Configuration {
            with_table: true,
            ..Default::default()
        };
        let c = render_reference(&w, &config, &w.camera);
        assert_eq!(c.len(), 48);
        assert!(c.points.iter().all(|p| p[2] == 1.0));
    }
}
