//! Surface sampling of primitives and a per-pixel point z-buffer.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraModel;
use crate::cloud::{PointCloud, ARM_LABEL};
use crate::pose::Pose;

/// Accumulates surface samples with one color and label.
pub(crate) struct Sampler<'a> {
    pub spacing: f64,
    pub rng: &'a mut ChaCha8Rng,
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub labels: Vec<u16>,
}

impl<'a> Sampler<'a> {
    pub fn new(spacing: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Sampler {
            spacing,
            rng,
            points: Vec::new(),
            colors: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn push(&mut self, p: Vector3<f64>, color: [u8; 3], label: u16) {
        self.points.push([p.x as f32, p.y as f32, p.z as f32]);
        self.colors.push(color);
        self.labels.push(label);
    }

    /// Jittered grid over the parallelogram `origin + a·s + b·t`, s, t ∈ [0, 1].
    pub fn rect(&mut self, origin: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, color: [u8; 3], label: u16) {
        let na = (a.norm() / self.spacing).ceil().max(1.0) as usize;
        let nb = (b.norm() / self.spacing).ceil().max(1.0) as usize;
        for i in 0..na {
            for j in 0..nb {
                let s = (i as f64 + self.rng.random::<f64>()) / na as f64;
                let t = (j as f64 + self.rng.random::<f64>()) / nb as f64;
                self.push(origin + a * s + b * t, color, label);
            }
        }
    }

    /// Axis-aligned box `[-sx/2, sx/2] × [-sy/2, sy/2] × [0, sz]`.
    pub fn cuboid(&mut self, size: [f64; 3], color: [u8; 3], label: u16) {
        let [sx, sy, sz] = size;
        let o = Vector3::new(-sx / 2.0, -sy / 2.0, 0.0);
        let (x, y, z) = (Vector3::x() * sx, Vector3::y() * sy, Vector3::z() * sz);
        self.rect(o, x, y, color, label);
        self.rect(o + z, x, y, color, label);
        self.rect(o, x, z, color, label);
        self.rect(o + y, x, z, color, label);
        self.rect(o, y, z, color, label);
        self.rect(o + x, y, z, color, label);
    }

    /// Cylinder along +Z from `z0` to `z1` with caps.
    pub fn cylinder(&mut self, radius: f64, z0: f64, z1: f64, color: [u8; 3], label: u16) {
        let ring = (std::f64::consts::TAU * radius / self.spacing).ceil().max(3.0) as usize;
        let rows = ((z1 - z0) / self.spacing).ceil().max(1.0) as usize;
        for i in 0..ring {
            for j in 0..rows {
                let phi = (i as f64 + self.rng.random::<f64>()) / ring as f64 * std::f64::consts::TAU;
                let z = z0 + (z1 - z0) * (j as f64 + self.rng.random::<f64>()) / rows as f64;
                self.push(Vector3::new(radius * phi.cos(), radius * phi.sin(), z), color, label);
            }
        }
        let rings = (radius / self.spacing).ceil().max(1.0) as usize;
        for z in [z0, z1] {
            for k in 0..rings {
                let r = radius * (k as f64 + self.rng.random::<f64>()) / rings as f64;
                let n = (std::f64::consts::TAU * r / self.spacing).ceil().max(1.0) as usize;
                for i in 0..n {
                    let phi = (i as f64 + self.rng.random::<f64>()) / n as f64 * std::f64::consts::TAU;
                    self.push(Vector3::new(r * phi.cos(), r * phi.sin(), z), color, label);
                }
            }
        }
    }

    pub fn finish(self) -> PointCloud {
        PointCloud {
            points: self.points,
            colors: Some(self.colors),
            labels: Some(self.labels),
        }
    }
}

pub(crate) const ARM_RADIUS: f64 = 0.025;
/// Extent of the arm proxy along the gripper's +Z axis.
pub(crate) const ARM_SPAN: [f64; 2] = [-0.25, -0.03];

/// Arm proxy: a cylinder behind the end effector along its approach axis (+Z).
pub(crate) fn arm_template(spacing: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut s = Sampler::new(spacing, rng);
    s.cylinder(ARM_RADIUS, ARM_SPAN[0], ARM_SPAN[1], [40, 40, 40], ARM_LABEL);
    s.finish()
}

/// Geometry needed to render the synthetic world at any configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub camera: CameraModel,
    pub world_to_camera: Pose,
    /// Table surface samples in the camera frame.
    pub table: PointCloud,
    /// Object surface samples in each object's own frame.
    pub templates: BTreeMap<u16, PointCloud>,
    /// Arm samples in the end-effector frame.
    pub arm: PointCloud,
    pub spacing: f64,
}

/// Where everything is, in the camera frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Configuration {
    /// Transform applied to the table.
    pub environment: Pose,
    /// Placement of each object's samples.
    pub objects: BTreeMap<u16, Pose>,
    /// End-effector poses; each carries an arm proxy.
    pub arms: Vec<Pose>,
    /// Include the table.
    pub with_table: bool,
}

/// Per-pixel nearest sample. Returns the cloud in row-major pixel order and
/// the depth image (0 where empty).
pub fn zbuffer_render<'a, I>(parts: I, cam: &CameraModel) -> (PointCloud, Vec<f32>)
where
    I: IntoIterator<Item = (&'a PointCloud, Pose)>,
{
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut depth = vec![f32::INFINITY; w * h];
    let mut best: Vec<Option<([f32; 3], [u8; 3], u16)>> = vec![None; w * h];
    for (cloud, pose) in parts {
        let r = pose.rotation_matrix();
        let t = pose.translation();
        for i in 0..cloud.len() {
            let p = r * cloud.point(i) + t;
            if p.z <= 0.0 || p.z < cam.depth_min || p.z > cam.depth_max {
                continue;
            }
            let u = cam.fx * p.x / p.z + cam.cx;
            let v = cam.fy * p.y / p.z + cam.cy;
            if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
                continue;
            }
            let cell = v.floor() as usize * w + u.floor() as usize;
            let d = p.z as f32;
            if d < depth[cell] {
                depth[cell] = d;
                let color = cloud.colors.as_ref().map_or([128, 128, 128], |c| c[i]);
                best[cell] = Some(([p.x as f32, p.y as f32, d], color, cloud.label(i)));
            }
        }
    }
    let mut out = PointCloud {
        points: Vec::new(),
        colors: Some(Vec::new()),
        labels: Some(Vec::new()),
    };
    for b in best.into_iter().flatten() {
        out.points.push(b.0);
        out.colors.as_mut().unwrap().push(b.1);
        out.labels.as_mut().unwrap().push(b.2);
    }
    for d in &mut depth {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    (out, depth)
}

/// The capture a camera `cam` would record of `world` at configuration `config`.
pub fn render_reference(world: &SynthWorld, config: &Configuration, cam: &CameraModel) -> PointCloud {
    render_with_depth(world, config, cam).0
}

pub(crate) fn render_with_depth(world: &SynthWorld, config: &Configuration, cam: &CameraModel) -> (PointCloud, Vec<f32>) {
    let mut parts: Vec<(&PointCloud, Pose)> = Vec::new();
    if config.with_table {
        parts.push((&world.table, config.environment));
    }
    for (id, pose) in &config.objects {
        if let Some(t) = world.templates.get(id) {
            parts.push((t, *pose));
        }
    }
    for ee in &config.arms {
        parts.push((&world.arm, *ee));
    }
    zbuffer_render(parts, cam)
}

/// Seeded generator shared by all samplers of one scene.
pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
