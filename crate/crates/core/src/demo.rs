//! Demonstration data model: observations, actions and parsed scenes.

use std::collections::BTreeMap;

use crate::camera::{CameraError, CameraModel};
use crate::cloud::{CloudError, PointCloud};
use crate::pose::Pose;

/// Gripper opening width in meters, quantized to 1 mm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Grip(f32);

impl Grip {
    pub fn new(width: f32) -> Self {
        Grip(((width as f64 * 1000.0).round() / 1000.0) as f32)
    }

    /// Wraps a raw stored value without re-quantizing.
    pub fn from_raw(width: f32) -> Self {
        Grip(width)
    }

    pub fn width(&self) -> f32 {
        self.0
    }

    pub fn is_closed(&self, threshold: f32) -> bool {
        self.0 < threshold
    }
}

/// End-effector pose and gripper state per arm (left first when bimanual).
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub ee: Vec<Pose>,
    pub grip: Vec<Grip>,
}

impl Action {
    pub fn single(ee: Pose, grip: Grip) -> Self {
        Action {
            ee: vec![ee],
            grip: vec![grip],
        }
    }

    pub fn arm_count(&self) -> usize {
        self.ee.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub observation: PointCloud,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvariantError {
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error("demonstration needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("arm count must be 1 or 2, got {0}")]
    ArmCount(usize),
    #[error("frame {frame}: {reason}")]
    Frame { frame: usize, reason: String },
}

impl InvariantError {
    pub fn frame(frame: usize, reason: impl ToString) -> Self {
        InvariantError::Frame {
            frame,
            reason: reason.to_string(),
        }
    }
}

/// Time-indexed observation/action pairs. Frame numbers in messages are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub camera: CameraModel,
    pub arm_count: usize,
    pub frames: Vec<Frame>,
    /// Reduced camera after shrink-fill, if the demo was camera-processed.
    pub effective_camera: Option<CameraModel>,
    /// Labels of non-rigid objects, exempt from hidden-point removal.
    pub bypass_labels: Vec<u16>,
}

impl Demonstration {
    pub fn new(camera: CameraModel, arm_count: usize, frames: Vec<Frame>) -> Self {
        Demonstration {
            camera,
            arm_count,
            frames,
            effective_camera: None,
            bypass_labels: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.frames.len()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.frames.iter().map(|f| f.action.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        self.camera.validate()?;
        if let Some(c) = &self.effective_camera {
            c.validate()?;
        }
        if !(1..=2).contains(&self.arm_count) {
            return Err(InvariantError::ArmCount(self.arm_count));
        }
        if self.frames.len() < 2 {
            return Err(InvariantError::TooShort(self.frames.len()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let n = i + 1;
            if f.observation.is_empty() {
                return Err(InvariantError::frame(n, "empty observation"));
            }
            f.observation
                .validate()
                .map_err(|e: CloudError| InvariantError::frame(n, e))?;
            if f.action.ee.len() != self.arm_count || f.action.grip.len() != self.arm_count {
                return Err(InvariantError::frame(
                    n,
                    format!("action has {} arms, expected {}", f.action.ee.len(), self.arm_count),
                ));
            }
            for p in &f.action.ee {
                Pose::from_matrix(*p.matrix()).map_err(|e| InvariantError::frame(n, e))?;
            }
        }
        Ok(())
    }
}

/// Scanned object surface in its canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTemplate {
    pub id: u16,
    pub cloud: PointCloud,
    pub rigid: bool,
}

/// Per-frame placements of rigid templates and tracked clouds of non-rigid objects.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingInput {
    pub poses: BTreeMap<u16, Vec<Pose>>,
    pub nonrigid: BTreeMap<u16, Vec<PointCloud>>,
    /// Observation of the workspace taken before any object was placed.
    pub environment: PointCloud,
}

/// A demonstration decomposed into environment, complete objects and arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScene {
    pub demo: Demonstration,
    pub environment: PointCloud,
    pub templates: Vec<ObjectTemplate>,
    /// Rigid object placements per frame.
    pub object_poses: BTreeMap<u16, Vec<Pose>>,
    /// Tracked clouds for non-rigid objects per frame.
    pub nonrigid: BTreeMap<u16, Vec<PointCloud>>,
    pub arm: Vec<PointCloud>,
}

impl ParsedScene {
    pub fn object_ids(&self) -> Vec<u16> {
        self.templates.iter().map(|t| t.id).collect()
    }

    pub fn template(&self, id: u16) -> Option<&ObjectTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn horizon(&self) -> usize {
        self.demo.horizon()
    }

    /// Object `id` as observed (completed) at 0-based frame `t`.
    pub fn object_cloud(&self, id: u16, t: usize) -> Option<PointCloud> {
        let tpl = self.template(id)?;
        if tpl.rigid {
            let pose = self.object_poses.get(&id)?.get(t)?;
            Some(crate::cloud::transform_cloud(&tpl.cloud, pose).with_label(id))
        } else {
            self.nonrigid
                .get(&id)?
                .get(t)
                .map(|c| c.clone().with_label(id))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grip_quantizes_to_mm() {
        assert_eq!(Grip::new(0.0414).width(), 0.041);
        assert_eq!(Grip::new(0.0416).width(), 0.042);
        assert!(Grip::new(0.01).is_closed(0.02));
    }
}
