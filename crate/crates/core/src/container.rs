//! On-disk demonstration containers.
//!
//! A container is a directory:
//!
//! ```text
//! meta.json                 camera, arm count, horizon, format version "1"
//! frames/000001.pcd-bin     one cloud per frame, 1-based
//! actions.bin               per frame, per arm: 16 x f64 pose (row-major) + f32 grip
//! ```
//!
//! A parsed scene adds `environment.pcd-bin`, `scene.json`,
//! `templates/obj_<id>.pcd-bin`, `poses/obj_<id>.bin`, `arm/000001.pcd-bin` and
//! `nonrigid/obj_<id>/000001.pcd-bin`. All binary data is little-endian.
//!
//! `.pcd-bin` layout: `u32` point count, xyz `f32` triples, then optionally
//! rgb `u8` triples, then optionally `u16` labels. Which optional sections are
//! present follows from the file length.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::cloud::PointCloud;
use crate::demo::{
    Action, Demonstration, Frame, Grip, InvariantError, ObjectTemplate, ParsedScene, TrackingInput,
};
use crate::pose::Pose;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("malformed container {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("invariant violation: {0}")]
    Invariant(#[from] InvariantError),
    #[error("io failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ContainerError {
    fn malformed(path: &Path, reason: impl ToString) -> Self {
        ContainerError::Malformed {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ContainerError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ContainerError::malformed(path, "missing file"),
        _ => ContainerError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn frame_file_name(frame: usize) -> String {
    format!("{frame:06}.pcd-bin")
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(4 + n * 17);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in &cloud.points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    if let Some(colors) = &cloud.colors {
        for c in colors {
            out.extend_from_slice(c);
        }
    }
    if let Some(labels) = &cloud.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud, String> {
    if bytes.len() < 4 {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let body = bytes.len() - 4;
    let (has_rgb, has_labels) = if body == 12 * n {
        (false, false)
    } else if body == 15 * n {
        (true, false)
    } else if body == 14 * n {
        (false, true)
    } else if body == 17 * n {
        (true, true)
    } else {
        return Err(format!("payload of {body} bytes does not fit {n} points"));
    };
    let mut off = 4;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0f32; 3];
        for c in &mut p {
            *c = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
        points.push(p);
    }
    let colors = has_rgb.then(|| {
        let c: Vec<[u8; 3]> = bytes[off..off + 3 * n]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        off += 3 * n;
        c
    });
    let labels = has_labels.then(|| {
        bytes[off..off + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    });
    let cloud = PointCloud {
        points,
        colors,
        labels,
    };
    cloud.validate().map_err(|e| e.to_string())?;
    Ok(cloud)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), ContainerError> {
    write(path, &encode_cloud(cloud))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, ContainerError> {
    let bytes = read(path)?;
    decode_cloud(&bytes).map_err(|r| ContainerError::malformed(path, r))
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<(), ContainerError> {
    let mut out = Vec::with_capacity(poses.len() * 128);
    for p in poses {
        for v in p.to_row_major() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write(path, &out)
}

fn decode_pose(bytes: &[u8]) -> Result<Pose, crate::pose::PoseError> {
    let mut v = [0f64; 16];
    for (i, c) in bytes.chunks_exact(8).enumerate() {
        v[i] = f64::from_le_bytes(c.try_into().unwrap());
    }
    Pose::from_row_major(&v)
}

/// Reads a per-frame pose file. Pose errors carry the 1-based frame number.
pub fn read_poses(path: &Path) -> Result<Vec<Pose>, ContainerError> {
    let bytes = read(path)?;
    if bytes.len() % 128 != 0 {
        return Err(ContainerError::malformed(
            path,
            format!("{} bytes is not a whole number of poses", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(128)
        .enumerate()
        .map(|(i, c)| decode_pose(c).map_err(|e| InvariantError::frame(i + 1, e).into()))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: String,
    camera: CameraModel,
    arm_count: usize,
    horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    effective_camera: Option<CameraModel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bypass_labels: Vec<u16>,
}

const ACTION_ARM_BYTES: usize = 16 * 8 + 4;

pub fn encode_actions(frames: &[Frame]) -> Vec<u8> {
    let arms = frames.first().map_or(0, |f| f.action.arm_count());
    let mut out = Vec::with_capacity(frames.len() * arms * ACTION_ARM_BYTES);
    for f in frames {
        for (pose, grip) in f.action.ee.iter().zip(&f.action.grip) {
            for v in pose.to_row_major() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&grip.width().to_le_bytes());
        }
    }
    out
}

pub fn save_demonstration(demo: &Demonstration, dir: &Path) -> Result<(), ContainerError> {
    let meta = Meta {
        format_version: FORMAT_VERSION.to_string(),
        camera: demo.camera,
        arm_count: demo.arm_count,
        horizon: demo.horizon(),
        effective_camera: demo.effective_camera,
        bypass_labels: demo.bypass_labels.clone(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write(&dir.join("meta.json"), &json)?;
    for (i, f) in demo.frames.iter().enumerate() {
        write_cloud(
            &dir.join("frames").join(frame_file_name(i + 1)),
            &f.observation,
        )?;
    }
    write(&dir.join("actions.bin"), &encode_actions(&demo.frames))
}

pub fn load_demonstration(dir: &Path) -> Result<Demonstration, ContainerError> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| ContainerError::malformed(&meta_path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(ContainerError::malformed(
            &meta_path,
            format!("unsupported format version {:?}", meta.format_version),
        ));
    }
    if !(1..=2).contains(&meta.arm_count) {
        return Err(InvariantError::ArmCount(meta.arm_count).into());
    }
    let actions_path = dir.join("actions.bin");
    let actions = read(&actions_path)?;
    let per_frame = meta.arm_count * ACTION_ARM_BYTES;
    if actions.len() != per_frame * meta.horizon {
        return Err(ContainerError::malformed(
            &actions_path,
            format!(
                "expected {} bytes for {} frames, found {}",
                per_frame * meta.horizon,
                meta.horizon,
                actions.len()
            ),
        ));
    }
    let mut frames = Vec::with_capacity(meta.horizon);
    for (i, chunk) in actions.chunks_exact(per_frame).enumerate() {
        let mut action = Action {
            ee: Vec::with_capacity(meta.arm_count),
            grip: Vec::with_capacity(meta.arm_count),
        };
        for arm in chunk.chunks_exact(ACTION_ARM_BYTES) {
            let pose = decode_pose(&arm[..128]).map_err(|e| InvariantError::frame(i + 1, e))?;
            action.ee.push(pose);
            action.grip.push(Grip::from_raw(f32::from_le_bytes(
                arm[128..132].try_into().unwrap(),
            )));
        }
        let observation = read_cloud(&dir.join("frames").join(frame_file_name(i + 1)))?;
        frames.push(Frame {
            observation,
            action,
        });
    }
    let demo = Demonstration {
        camera: meta.camera,
        arm_count: meta.arm_count,
        frames,
        effective_camera: meta.effective_camera,
        bypass_labels: meta.bypass_labels,
    };
    demo.validate()?;
    Ok(demo)
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    objects: Vec<SceneObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneObject {
    id: u16,
    rigid: bool,
}

fn obj_name(id: u16, ext: &str) -> String {
    format!("obj_{id}.{ext}")
}

/// Writes the source demonstration together with its decomposition.
pub fn save_scene(scene: &ParsedScene, dir: &Path) -> Result<(), ContainerError> {
    save_demonstration(&scene.demo, dir)?;
    write_cloud(&dir.join("environment.pcd-bin"), &scene.environment)?;
    let meta = SceneMeta {
        objects: scene
            .templates
            .iter()
            .map(|t| SceneObject {
                id: t.id,
                rigid: t.rigid,
            })
            .collect(),
    };
    write(
        &dir.join("scene.json"),
        &serde_json::to_vec_pretty(&meta).expect("scene meta serializes"),
    )?;
    for t in &scene.templates {
        if t.rigid {
            write_cloud(&dir.join("templates").join(obj_name(t.id, "pcd-bin")), &t.cloud)?;
        }
    }
    for (id, poses) in &scene.object_poses {
        write_poses(&dir.join("poses").join(obj_name(*id, "bin")), poses)?;
    }
    for (id, clouds) in &scene.nonrigid {
        let sub = dir.join("nonrigid").join(format!("obj_{id}"));
        for (i, c) in clouds.iter().enumerate() {
            write_cloud(&sub.join(frame_file_name(i + 1)), c)?;
        }
    }
    for (i, c) in scene.arm.iter().enumerate() {
        write_cloud(&dir.join("arm").join(frame_file_name(i + 1)), c)?;
    }
    Ok(())
}

fn read_frame_series(dir: &Path, horizon: usize) -> Result<Vec<PointCloud>, ContainerError> {
    (1..=horizon)
        .map(|i| read_cloud(&dir.join(frame_file_name(i))))
        .collect()
}

pub fn load_scene(dir: &Path) -> Result<ParsedScene, ContainerError> {
    let demo = load_demonstration(dir)?;
    let h = demo.horizon();
    let environment = read_cloud(&dir.join("environment.pcd-bin"))?;
    let meta_path = dir.join("scene.json");
    let meta: SceneMeta = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| ContainerError::malformed(&meta_path, e))?;
    let mut templates = Vec::new();
    let mut object_poses = BTreeMap::new();
    let mut nonrigid = BTreeMap::new();
    for o in &meta.objects {
        if o.id == 0 {
            return Err(ContainerError::malformed(&meta_path, "object id 0 is reserved"));
        }
        if o.rigid {
            let cloud = read_cloud(&dir.join("templates").join(obj_name(o.id, "pcd-bin")))?;
            let poses = read_poses(&dir.join("poses").join(obj_name(o.id, "bin")))?;
            if poses.len() != h {
                return Err(ContainerError::malformed(
                    dir,
                    format!("object {} has {} poses for {} frames", o.id, poses.len(), h),
                ));
            }
            object_poses.insert(o.id, poses);
            templates.push(ObjectTemplate {
                id: o.id,
                cloud,
                rigid: true,
            });
        } else {
            let clouds = read_frame_series(&dir.join("nonrigid").join(format!("obj_{}", o.id)), h)?;
            nonrigid.insert(o.id, clouds);
            templates.push(ObjectTemplate {
                id: o.id,
                cloud: PointCloud::default(),
                rigid: false,
            });
        }
    }
    let arm = read_frame_series(&dir.join("arm"), h)?;
    Ok(ParsedScene {
        demo,
        environment,
        templates,
        object_poses,
        nonrigid,
        arm,
    })
}

/// Writes tracker outputs: poses, non-rigid clouds, environment and templates.
pub fn save_tracking(
    tracking: &TrackingInput,
    templates: &[ObjectTemplate],
    dir: &Path,
) -> Result<(), ContainerError> {
    write_cloud(&dir.join("environment.pcd-bin"), &tracking.environment)?;
    for t in templates.iter().filter(|t| t.rigid) {
        write_cloud(&dir.join("templates").join(obj_name(t.id, "pcd-bin")), &t.cloud)?;
    }
    for (id, poses) in &tracking.poses {
        write_poses(&dir.join("poses").join(obj_name(*id, "bin")), poses)?;
    }
    for (id, clouds) in &tracking.nonrigid {
        let sub = dir.join("nonrigid").join(format!("obj_{id}"));
        for (i, c) in clouds.iter().enumerate() {
            write_cloud(&sub.join(frame_file_name(i + 1)), c)?;
        }
    }
    Ok(())
}

fn parse_obj_id(name: &str, ext: Option<&str>) -> Option<u16> {
    let rest = name.strip_prefix("obj_")?;
    let rest = match ext {
        Some(e) => rest.strip_suffix(e)?,
        None => rest,
    };
    rest.parse().ok()
}

fn list_dir(dir: &Path) -> Result<Vec<String>, ContainerError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

/// Reads tracker outputs for a demonstration of `horizon` frames. Rigid objects
/// are those with a template; non-rigid ones have a `nonrigid/obj_<id>` series.
pub fn load_tracking(
    dir: &Path,
    horizon: usize,
) -> Result<(TrackingInput, Vec<ObjectTemplate>), ContainerError> {
    let environment = read_cloud(&dir.join("environment.pcd-bin"))?;
    let mut templates = Vec::new();
    let mut poses = BTreeMap::new();
    for name in list_dir(&dir.join("templates"))? {
        let Some(id) = parse_obj_id(&name, Some(".pcd-bin")) else {
            continue;
        };
        let cloud = read_cloud(&dir.join("templates").join(&name))?;
        templates.push(ObjectTemplate {
            id,
            cloud,
            rigid: true,
        });
        let pose_path = dir.join("poses").join(obj_name(id, "bin"));
        if pose_path.exists() {
            poses.insert(id, read_poses(&pose_path)?);
        }
    }
    let mut nonrigid = BTreeMap::new();
    for name in list_dir(&dir.join("nonrigid"))? {
        let Some(id) = parse_obj_id(&name, None) else {
            continue;
        };
        let sub = dir.join("nonrigid").join(&name);
        let count = list_dir(&sub)?.len().min(horizon);
        nonrigid.insert(id, read_frame_series(&sub, count)?);
        templates.push(ObjectTemplate {
            id,
            cloud: PointCloud::default(),
            rigid: false,
        });
    }
    templates.sort_by_key(|t| t.id);
    Ok((
        TrackingInput {
            poses,
            nonrigid,
            environment,
        },
        templates,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        (0usize..40, any::<bool>(), any::<bool>(), any::<u64>()).prop_map(
            |(n, rgb, lab, seed)| {
                let mut s = seed;
                let mut next = || {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 33) as u32
                };
                let points = (0..n)
                    .map(|_| {
                        [
                            next() as f32 / 1e9 - 2.0,
                            next() as f32 / 1e9 - 2.0,
                            next() as f32 / 1e9,
                        ]
                    })
                    .collect();
                let colors =
                    rgb.then(|| (0..n).map(|_| [next() as u8, next() as u8, next() as u8]).collect());
                let labels = lab.then(|| (0..n).map(|_| next() as u16).collect());
                PointCloud {
                    points,
                    colors,
                    labels,
                }
            },
        )
    }

    proptest! {
        #[test]
        fn cloud_codec_roundtrip(c in arb_cloud()) {
            let bytes = encode_cloud(&c);
            let back = decode_cloud(&bytes).unwrap();
            // an empty cloud cannot record which optional sections it had
            if c.is_empty() {
                prop_assert!(back.is_empty());
            } else {
                prop_assert_eq!(back, c);
            }
        }
    }

    #[test]
    fn truncated_cloud_rejected() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]; 3]);
        let bytes = encode_cloud(&c);
        assert!(decode_cloud(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_cloud(&bytes[..2]).is_err());
    }
}
