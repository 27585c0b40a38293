//! Spatial augmentation of point-cloud robot demonstrations.
//!
//! One parsed source demonstration (point-cloud observations, end-effector
//! actions, object templates and poses, skill/motion annotations) is turned
//! into many demonstrations with objects and environment moved to new
//! placements. Skill trajectories follow their object groups, motion segments
//! are re-planned, and every frame is re-rendered for a single RGB-D viewpoint
//! by hidden-point removal.

pub mod annotation;
pub mod augment;
pub mod camera;
pub mod cloud;
pub mod config;
pub mod container;
pub mod dataset;
pub mod demo;
pub mod image;
pub mod index;
pub mod metrics;
pub mod motion;
pub mod pose;
pub mod processor;
pub mod scene;
pub mod synth;
pub mod validate;
#[cfg(test)]
mod testutil;

pub use annotation::{AnnotationError, AnnotationSet, IdSet, Segment, SegmentKind};
pub use camera::CameraModel;
pub use cloud::{transform_cloud, PointCloud, ARM_LABEL, UNLABELED};
pub use demo::{Action, Demonstration, Frame, Grip, ObjectTemplate, ParsedScene, TrackingInput};
pub use pose::Pose;
