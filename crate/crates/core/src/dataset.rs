//! Generated dataset layout and batch camera-aware processing.
//!
//! ```text
//! plan_000000.json            tuple, sampled plan, source frame per output frame
//! demo_000000/                demonstration container
//! demo_000000/annotation.json re-timed segments
//! demo_000000/poses/obj_<id>.bin  rigid object poses per frame
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{parse_annotation, AnnotationError, AnnotationSet, TrailingMotion};
use crate::augment::{materialize, plan_batch, AugmentError, DemoTuple, GeneratedDemo, GroupTransformPlan, PlanContext, SamplerConfig};
use crate::camera::CameraModel;
use crate::container::{load_demonstration, read_poses, save_demonstration, write_poses, ContainerError};
use crate::demo::ParsedScene;
use crate::motion::PlannerConfig;
use crate::processor::{
    frame_coverage, process_frame_in, shrink_rect, CoverageMask, FillMode, PixelRect, ProcessorConfig,
    ProcessorError,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Processor(#[from] ProcessorError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("io failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Contents of `plan_%06d.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub tuple: DemoTuple,
    pub plan: GroupTransformPlan,
    /// 1-based source frame per output frame.
    pub source_frames: Vec<usize>,
}

pub fn demo_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("demo_{index:06}"))
}

pub fn plan_file(root: &Path, index: usize) -> PathBuf {
    root.join(format!("plan_{index:06}.json"))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_generated(root: &Path, g: &GeneratedDemo) -> Result<(), DatasetError> {
    let dir = demo_dir(root, g.tuple.index);
    save_demonstration(&g.demo, &dir)?;
    g.annotation.save(&dir.join("annotation.json"))?;
    for (id, poses) in &g.object_poses {
        write_poses(&dir.join("poses").join(format!("obj_{id}.bin")), poses)?;
    }
    let record = PlanRecord {
        tuple: g.tuple,
        plan: g.plan.clone(),
        source_frames: g.source_frames.clone(),
    };
    let path = plan_file(root, g.tuple.index);
    let mut json = serde_json::to_string_pretty(&record).expect("plan serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io(&path))
}

/// Loads demo `index`; `object_count` bounds the annotation's ids.
pub fn read_generated(root: &Path, index: usize, object_count: usize) -> Result<GeneratedDemo, DatasetError> {
    let dir = demo_dir(root, index);
    let demo = load_demonstration(&dir)?;
    let annotation = parse_annotation(
        &dir.join("annotation.json"),
        object_count,
        demo.horizon(),
        TrailingMotion::Reject,
    )?;
    let path = plan_file(root, index);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let record: PlanRecord = serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut object_poses = BTreeMap::new();
    let poses_dir = dir.join("poses");
    if poses_dir.is_dir() {
        for entry in fs::read_dir(&poses_dir).map_err(io(&poses_dir))? {
            let p = entry.map_err(io(&poses_dir))?.path();
            let id = p
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("obj_"))
                .and_then(|n| n.strip_suffix(".bin"))
                .and_then(|n| n.parse::<u16>().ok());
            if let Some(id) = id {
                object_poses.insert(id, read_poses(&p)?);
            }
        }
    }
    Ok(GeneratedDemo {
        tuple: record.tuple,
        plan: record.plan,
        demo,
        annotation,
        object_poses,
        source_frames: record.source_frames,
    })
}

/// Indices of all `demo_%06d` directories under `root`, ascending.
pub fn list_demos(root: &Path) -> Result<Vec<usize>, DatasetError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io(root))? {
        let entry = entry.map_err(io(root))?;
        if let Some(i) = entry
            .file_name()
            .to_str()
            .and_then(|n| n.strip_prefix("demo_"))
            .and_then(|n| n.parse::<usize>().ok())
        {
            if entry.path().is_dir() {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Which frames share one shrink window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkScope {
    /// Every frame of every demo in the batch.
    #[default]
    Dataset,
    /// The frames of each demo separately.
    Demo,
}

/// Camera-aware processing of every observation, in place. Sets each demo's
/// effective camera.
pub fn process_demos(demos: &mut [GeneratedDemo], cfg: &ProcessorConfig, scope: ShrinkScope) -> Result<(), ProcessorError> {
    let Some(first) = demos.first() else {
        return Ok(());
    };
    let cam = first.demo.camera;
    let ca = CameraAware {
        processor: *cfg,
        scope,
    };
    let shared = shared_rect(demos.par_iter().map(|g| demo_coverage(g, cfg)), &cam, &ca)?;
    for g in demos.iter_mut() {
        let rect = window(g, shared, &ca)?;
        process_demo(g, cfg, rect)?;
    }
    Ok(())
}

/// Intersection of the environment coverage of every frame of `g`.
pub fn demo_coverage(g: &GeneratedDemo, cfg: &ProcessorConfig) -> CoverageMask {
    let cam = g.demo.camera;
    g.demo
        .frames
        .par_iter()
        .map(|f| frame_coverage(&f.observation, &cam, cfg, &g.demo.bypass_labels))
        .reduce_with(|mut a, b| {
            a.intersect(&b);
            a
        })
        .unwrap_or_else(|| CoverageMask::new(&cam, cfg.coverage_block))
}

/// Processes one demo with a fixed window (`None` for expand fill).
pub fn process_demo(g: &mut GeneratedDemo, cfg: &ProcessorConfig, rect: Option<PixelRect>) -> Result<(), ProcessorError> {
    let cam = g.demo.camera;
    let bypass = g.demo.bypass_labels.clone();
    let results: Vec<_> = g
        .demo
        .frames
        .par_iter()
        .map(|f| process_frame_in(&f.observation, &cam, cfg, &bypass, rect))
        .collect::<Result<_, _>>()?;
    let mut effective = cam;
    for (f, (cloud, eff)) in g.demo.frames.iter_mut().zip(results) {
        f.observation = cloud;
        effective = eff;
    }
    g.demo.effective_camera = Some(effective);
    Ok(())
}

/// How a batch run went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub requested: usize,
    pub written: Vec<usize>,
    /// `(index, reason)` of tuples that were skipped.
    pub skipped: Vec<(usize, String)>,
    pub effective_camera: Option<CameraModel>,
}

/// Camera-processing options of a batch; `None` writes raw over-complete clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraAware {
    pub processor: ProcessorConfig,
    pub scope: ShrinkScope,
}

fn shared_rect<I>(coverages: I, cam: &CameraModel, ca: &CameraAware) -> Result<Option<PixelRect>, ProcessorError>
where
    I: ParallelIterator<Item = CoverageMask>,
{
    if ca.processor.fill == FillMode::Expand || ca.scope != ShrinkScope::Dataset {
        return Ok(None);
    }
    let mut full = CoverageMask::new(cam, ca.processor.coverage_block);
    full.covered.iter_mut().for_each(|c| *c = true);
    let mask = coverages
        .reduce_with(|mut a, b| {
            a.intersect(&b);
            a
        })
        .unwrap_or(full);
    shrink_rect(&mask, cam, &ca.processor).map(Some)
}

fn window(
    g: &GeneratedDemo,
    shared: Option<PixelRect>,
    ca: &CameraAware,
) -> Result<Option<PixelRect>, ProcessorError> {
    if ca.processor.fill == FillMode::Expand {
        return Ok(None);
    }
    match shared {
        Some(r) => Ok(Some(r)),
        None => shrink_rect(&demo_coverage(g, &ca.processor), &g.demo.camera, &ca.processor).map(Some),
    }
}

/// Demos held in memory at once by the streaming passes.
fn chunk_size() -> usize {
    (2 * rayon::current_num_threads()).max(2)
}

/// Plans, materializes, optionally camera-processes and writes a whole batch.
/// With a dataset-wide shrink window, demos are materialized twice: once to
/// collect coverage, once to process and write, so memory stays bounded.
pub fn generate_dataset(
    scene: &ParsedScene,
    ann: &AnnotationSet,
    sampler: &SamplerConfig,
    planner: &PlannerConfig,
    seed: u64,
    camera_aware: Option<CameraAware>,
    out: &Path,
) -> Result<BatchSummary, DatasetError> {
    fs::create_dir_all(out).map_err(io(out))?;
    let ctx = PlanContext::new(scene, ann, sampler)?;
    let mut plans = Vec::new();
    let mut skipped = Vec::new();
    for (tuple, plan) in plan_batch(&ctx, seed) {
        match plan {
            Ok(p) => plans.push((tuple, p)),
            Err(e) => {
                log::warn!("demo {} skipped: {e}", tuple.index);
                skipped.push((tuple.index, e.to_string()));
            }
        }
    }
    let cam = scene.demo.camera;
    let shared = match &camera_aware {
        Some(ca) => shared_rect(
            plans.par_iter().map(|(t, p)| demo_coverage(&materialize(scene, ann, p, planner, *t), &ca.processor)),
            &cam,
            ca,
        )?,
        None => None,
    };
    let mut effective = None;
    for chunk in plans.chunks(chunk_size()) {
        let done: Vec<Option<CameraModel>> = chunk
            .par_iter()
            .map(|(t, p)| -> Result<Option<CameraModel>, DatasetError> {
                let mut g = materialize(scene, ann, p, planner, *t);
                if let Some(ca) = &camera_aware {
                    let rect = window(&g, shared, ca)?;
                    process_demo(&mut g, &ca.processor, rect)?;
                }
                write_generated(out, &g)?;
                Ok(g.demo.effective_camera)
            })
            .collect::<Result<_, _>>()?;
        effective = done.last().copied().flatten().or(effective);
    }
    if !skipped.is_empty() {
        log::warn!("generated {} of {} demonstrations", plans.len(), sampler.total());
    }
    Ok(BatchSummary {
        requested: sampler.total(),
        written: plans.iter().map(|(t, _)| t.index).collect(),
        skipped,
        effective_camera: effective,
    })
}

/// Camera-processes every demo of the dataset at `input` into `out`.
pub fn process_dataset(
    input: &Path,
    out: &Path,
    object_count: usize,
    ca: &CameraAware,
) -> Result<BatchSummary, DatasetError> {
    let ids = list_demos(input)?;
    fs::create_dir_all(out).map_err(io(out))?;
    let Some(&first) = ids.first() else {
        return Ok(BatchSummary {
            requested: 0,
            written: Vec::new(),
            skipped: Vec::new(),
            effective_camera: None,
        });
    };
    let cam = read_generated(input, first, object_count)?.demo.camera;
    let shared = if ca.processor.fill == FillMode::Shrink && ca.scope == ShrinkScope::Dataset {
        let masks: Vec<CoverageMask> = ids
            .par_iter()
            .map(|&i| read_generated(input, i, object_count).map(|g| demo_coverage(&g, &ca.processor)))
            .collect::<Result<_, _>>()?;
        shared_rect(masks.into_par_iter(), &cam, ca)?
    } else {
        None
    };
    let mut effective = None;
    for chunk in ids.chunks(chunk_size()) {
        let done: Vec<Option<CameraModel>> = chunk
            .par_iter()
            .map(|&i| -> Result<Option<CameraModel>, DatasetError> {
                let mut g = read_generated(input, i, object_count)?;
                let rect = window(&g, shared, ca)?;
                process_demo(&mut g, &ca.processor, rect)?;
                write_generated(out, &g)?;
                Ok(g.demo.effective_camera)
            })
            .collect::<Result<_, _>>()?;
        effective = done.last().copied().flatten().or(effective);
    }
    Ok(BatchSummary {
        requested: ids.len(),
        written: ids,
        skipped: Vec::new(),
        effective_camera: effective,
    })
}
