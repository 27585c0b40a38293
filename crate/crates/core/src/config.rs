//! Pipeline configuration file. Angles are written in degrees here and
//! converted to radians when the runtime configs are built.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::TrailingMotion;
use crate::augment::{PlaneFitConfig, SamplerConfig, SamplingMode, Workspace};
use crate::motion::PlannerConfig;
use crate::processor::{FillMode, Neighborhood, ProcessorConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ModeFile {
    Continuous,
    Grid {
        locations: Vec<[f64; 2]>,
        rotations_deg: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerFile {
    pub workspace_x: [f64; 2],
    pub workspace_y: [f64; 2],
    pub rotation_deg: f64,
    pub perturb_radius: f64,
    pub perturb_rotation_deg: f64,
    pub perturbations: usize,
    pub replays: usize,
    pub combinations: usize,
    pub clearance: f64,
    pub max_attempts: usize,
    pub env_translation: f64,
    pub env_rotation_deg: f64,
    pub mode: ModeFile,
    pub plane_threshold: f64,
    pub plane_iterations: usize,
    pub plane_min_inlier_fraction: f64,
}

impl Default for SamplerFile {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerFile {
            workspace_x: s.workspace.x,
            workspace_y: s.workspace.y,
            rotation_deg: s.rotation.to_degrees(),
            perturb_radius: s.perturb_radius,
            perturb_rotation_deg: s.perturb_rotation.to_degrees(),
            perturbations: s.perturbations,
            replays: s.replays,
            combinations: s.combinations,
            clearance: s.clearance,
            max_attempts: s.max_attempts,
            env_translation: s.env_translation,
            env_rotation_deg: s.env_rotation.to_degrees(),
            mode: ModeFile::Continuous,
            plane_threshold: s.plane.threshold,
            plane_iterations: s.plane.iterations,
            plane_min_inlier_fraction: s.plane.min_inlier_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerFile {
    pub step: f64,
    pub lift: f64,
    pub rot_step_deg: f64,
}

impl Default for PlannerFile {
    fn default() -> Self {
        let p = PlannerConfig::default();
        PlannerFile {
            step: p.step,
            lift: p.lift,
            rot_step_deg: p.rot_step.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessorFile {
    pub patch_radius: usize,
    pub depth_margin: f64,
    pub fill: FillMode,
    pub neighborhood: Neighborhood,
    pub coverage_block: u32,
    pub min_size: u32,
    pub clip_depth: bool,
    /// One shrink window per frame instead of one per dataset.
    pub per_frame: bool,
}

impl Default for ProcessorFile {
    fn default() -> Self {
        let p = ProcessorConfig::default();
        ProcessorFile {
            patch_radius: p.patch_radius,
            depth_margin: p.depth_margin,
            fill: p.fill,
            neighborhood: p.neighborhood,
            coverage_block: p.coverage_block,
            min_size: p.min_size,
            clip_depth: p.clip_depth,
            per_frame: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceFile {
    /// Relative object pose error inside a skill group, meters / radians.
    pub rigidity: f64,
    /// Relative inter-arm pose drift during shared-object motion.
    pub bimanual: f64,
    /// Slack on the position step bound.
    pub step_slack: f64,
}

impl Default for ToleranceFile {
    fn default() -> Self {
        ToleranceFile {
            rigidity: 1e-6,
            bimanual: 1e-9,
            step_slack: 1e-9,
        }
    }
}

/// Everything `pcdgen` reads from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Set-difference tolerance of the scene parser, meters.
    pub scene_eps: f64,
    /// Gripper widths below this are "closed", meters.
    pub grip_closed_below: f32,
    /// Reject annotations with motion after the last skill instead of trimming.
    pub strict_annotation: bool,
    pub sampler: SamplerFile,
    pub planner: PlannerFile,
    pub processor: ProcessorFile,
    pub tolerance: ToleranceFile,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            scene_eps: crate::scene::DEFAULT_EPS,
            grip_closed_below: 0.04,
            strict_annotation: false,
            sampler: SamplerFile::default(),
            planner: PlannerFile::default(),
            processor: ProcessorFile::default(),
            tolerance: ToleranceFile::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let s = &self.sampler;
        if s.workspace_x[0] > s.workspace_x[1] || s.workspace_y[0] > s.workspace_y[1] {
            return bad("workspace bounds are reversed");
        }
        if s.perturb_radius < 0.0 || s.clearance < 0.0 || s.env_translation < 0.0 {
            return bad("radii, clearance and ranges must be non-negative");
        }
        if s.perturbations < 1 || s.replays < 1 || s.combinations < 1 {
            return bad("perturbations, replays and combinations must be at least 1");
        }
        if s.max_attempts < 1 {
            return bad("max_attempts must be at least 1");
        }
        if let ModeFile::Grid { locations, rotations_deg } = &s.mode {
            if locations.is_empty() || rotations_deg.is_empty() {
                return bad("grid mode needs at least one location and one rotation");
            }
        }
        let p = &self.planner;
        if !(p.step > 0.0) || !(p.rot_step_deg > 0.0) || p.lift < 0.0 {
            return bad("planner step and rot_step_deg must be positive and lift non-negative");
        }
        if !(self.scene_eps > 0.0) {
            return bad("scene_eps must be positive");
        }
        if self.processor.depth_margin < 0.0 || self.processor.coverage_block == 0 {
            return bad("depth_margin must be non-negative and coverage_block positive");
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            workspace: Workspace {
                x: s.workspace_x,
                y: s.workspace_y,
            },
            rotation: s.rotation_deg.to_radians(),
            perturb_radius: s.perturb_radius,
            perturb_rotation: s.perturb_rotation_deg.to_radians(),
            perturbations: s.perturbations,
            replays: s.replays,
            combinations: s.combinations,
            mode: match &s.mode {
                ModeFile::Continuous => SamplingMode::Continuous,
                ModeFile::Grid { locations, rotations_deg } => SamplingMode::Grid {
                    locations: locations.clone(),
                    rotations: rotations_deg.iter().map(|d| d.to_radians()).collect(),
                },
            },
            clearance: s.clearance,
            max_attempts: s.max_attempts,
            env_translation: s.env_translation,
            env_rotation: s.env_rotation_deg.to_radians(),
            plane: PlaneFitConfig {
                threshold: s.plane_threshold,
                iterations: s.plane_iterations,
                min_inlier_fraction: s.plane_min_inlier_fraction,
                seed: self.seed,
            },
        }
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            step: self.planner.step,
            lift: self.planner.lift,
            rot_step: self.planner.rot_step_deg.to_radians(),
        }
    }

    pub fn processor(&self) -> ProcessorConfig {
        let p = &self.processor;
        ProcessorConfig {
            patch_radius: p.patch_radius,
            depth_margin: p.depth_margin,
            fill: p.fill,
            neighborhood: p.neighborhood,
            coverage_block: p.coverage_block,
            min_size: p.min_size,
            clip_depth: p.clip_depth,
        }
    }

    pub fn trailing(&self) -> TrailingMotion {
        if self.strict_annotation {
            TrailingMotion::Reject
        } else {
            TrailingMotion::Trim
        }
    }
}
