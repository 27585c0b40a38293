//! `pcdgen`: synthesize, parse, annotate, generate, process, validate and
//! inspect point-cloud demonstrations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use pcdgen_core::annotation::parse_annotation;
use pcdgen_core::annotation::service::{serve, ServiceConfig};
use pcdgen_core::config::PipelineConfig;
use pcdgen_core::container::{load_demonstration, load_scene, load_tracking, save_scene};
use pcdgen_core::dataset::{generate_dataset, list_demos, process_dataset, read_generated, CameraAware, ShrinkScope};
use pcdgen_core::image::{depth_image, encode_pgm16};
use pcdgen_core::processor::FillMode;
use pcdgen_core::scene::parse_scene;
use pcdgen_core::synth::{make_scene, save_synth, SceneSpec};
use pcdgen_core::validate::{validate_demo, Tolerances};

#[derive(Parser, Debug)]
#[command(name = "pcdgen", version, about = "Spatial augmentation of point-cloud robot demonstrations")]
struct Cli {
    /// Worker threads for batch commands.
    #[arg(long, global = true, env = "PCDGEN_JOBS")]
    jobs: Option<usize>,
    /// Print the fully resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FillArg {
    Shrink,
    Expand,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene, its demonstration, tracking and annotation.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build a parsed scene from a raw demonstration and tracker outputs.
    Parse {
        /// Raw demonstration container.
        #[arg(long)]
        demo: PathBuf,
        /// Tracker outputs (environment, templates, poses).
        #[arg(long)]
        tracking: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Set-difference tolerance in meters; overrides the config file.
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Serve the annotation API for a directory of frame images.
    Annotate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Object count; inferred from the posted mask list when absent.
        #[arg(long)]
        objects: Option<usize>,
        /// Static UI bundle served under `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Generate augmented demonstrations from a parsed scene.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run camera-aware processing on the generated clouds.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        camera_aware: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Camera-aware processing of an existing generated dataset.
    Process {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        fill: Option<FillArg>,
        #[arg(long)]
        patch_radius: Option<usize>,
        /// Parsed scene the dataset came from (for its object count).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Check a generated dataset against its source; one JSON object per line.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Summarize a demonstration and optionally write a frame's depth image.
    Inspect {
        #[arg(long)]
        demo: PathBuf,
        /// 1-based frame for `--depth-out`.
        #[arg(long, default_value_t = 1)]
        frame: usize,
        /// Write the frame's depth as a 16-bit PGM (millimeters).
        #[arg(long)]
        depth_out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn resolved_config(cmd: &Command) -> Result<Option<PipelineConfig>> {
    Ok(match cmd {
        Command::Synth { cfg, .. } | Command::Generate { cfg, .. } | Command::Validate { cfg, .. } => {
            Some(load_config(cfg)?)
        }
        Command::Parse { cfg, eps, .. } => {
            let mut c = load_config(cfg)?;
            if let Some(e) = eps {
                c.scene_eps = *e;
            }
            Some(c)
        }
        Command::Process {
            cfg,
            fill,
            patch_radius,
            ..
        } => {
            let mut c = load_config(cfg)?;
            if let Some(f) = fill {
                c.processor.fill = match f {
                    FillArg::Shrink => FillMode::Shrink,
                    FillArg::Expand => FillMode::Expand,
                };
            }
            if let Some(r) = patch_radius {
                c.processor.patch_radius = *r;
            }
            Some(c)
        }
        Command::Annotate { .. } | Command::Inspect { .. } => None,
    })
}

fn emit(line: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}")?;
    Ok(())
}

fn camera_aware(cfg: &PipelineConfig) -> CameraAware {
    CameraAware {
        processor: cfg.processor(),
        scope: if cfg.processor.per_frame {
            ShrinkScope::Demo
        } else {
            ShrinkScope::Dataset
        },
    }
}

fn synth(spec_path: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec = SceneSpec::from_toml(&text)?;
    let scene = make_scene(&spec, cfg.seed)?;
    save_synth(&scene, &text, cfg.seed, out)?;
    emit(json!({
        "command": "synth",
        "frames": scene.demo.horizon(),
        "objects": scene.templates.len(),
        "skills": scene.annotation.skill_count(),
        "spacing": scene.world.spacing,
        "out": out.display().to_string(),
    }))
}

fn parse(demo: &Path, tracking: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let d = load_demonstration(demo)?;
    let (tr, templates) = load_tracking(tracking, d.horizon())?;
    let scene = parse_scene(&d, &templates, &tr, cfg.scene_eps)?;
    save_scene(&scene, out)?;
    let arm_points: usize = scene.arm.iter().map(|a| a.len()).sum();
    emit(json!({
        "command": "parse",
        "frames": scene.horizon(),
        "objects": scene.templates.len(),
        "arm_points": arm_points,
        "out": out.display().to_string(),
    }))
}

fn generate(scene_dir: &Path, ann_path: &Path, out: &Path, aware: bool, cfg: &PipelineConfig) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let ann = parse_annotation(ann_path, scene.templates.len(), scene.horizon(), cfg.trailing())?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let summary = generate_dataset(
        &scene,
        &ann,
        &cfg.sampler(),
        &cfg.planner(),
        cfg.seed,
        aware.then(|| camera_aware(cfg)),
        out,
    )?;
    emit(json!({
        "command": "generate",
        "requested": summary.requested,
        "generated": summary.written.len(),
        "skipped": summary.skipped,
        "effective_camera": summary.effective_camera,
        "out": out.display().to_string(),
    }))
}

fn process(input: &Path, out: &Path, scene: Option<&Path>, cfg: &PipelineConfig) -> Result<()> {
    let objects = match scene {
        Some(s) => load_scene(s)?.templates.len(),
        None => u16::MAX as usize,
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let summary = process_dataset(input, out, objects, &camera_aware(cfg))?;
    emit(json!({
        "command": "process",
        "processed": summary.written.len(),
        "effective_camera": summary.effective_camera,
        "out": out.display().to_string(),
    }))
}

/// Returns whether every demo passed.
fn validate(dataset: &Path, scene_dir: &Path, ann_path: &Path, cfg: &PipelineConfig) -> Result<bool> {
    let scene = load_scene(scene_dir)?;
    let k = scene.templates.len();
    let ann = parse_annotation(ann_path, k, scene.horizon(), cfg.trailing())?;
    let tol = Tolerances {
        rigidity: cfg.tolerance.rigidity,
        bimanual: cfg.tolerance.bimanual,
        step: cfg.planner.step,
        step_slack: cfg.tolerance.step_slack,
        grip_closed_below: cfg.grip_closed_below,
        ..Default::default()
    };
    let ids = list_demos(dataset)?;
    let reports: Vec<serde_json::Value> = ids
        .par_iter()
        .map(|&i| match read_generated(dataset, i, k) {
            Ok(g) => serde_json::to_value(validate_demo(&scene, &ann, &g, &tol)).expect("report serializes"),
            Err(e) => json!({
                "demo": i,
                "ok": false,
                "failures": [{"check": "load", "detail": e.to_string()}],
            }),
        })
        .collect();
    let failed = reports.iter().filter(|r| r["ok"] != true).count();
    for r in reports {
        emit(r)?;
    }
    emit(json!({"summary": true, "demos": ids.len(), "failed": failed, "ok": failed == 0}))?;
    Ok(failed == 0)
}

fn inspect(demo: &Path, frame: usize, depth_out: Option<&Path>) -> Result<()> {
    let d = load_demonstration(demo)?;
    if frame == 0 || frame > d.horizon() {
        bail!("frame {frame} is outside 1..={}", d.horizon());
    }
    let points: Vec<usize> = d.frames.iter().map(|f| f.observation.len()).collect();
    let cam = d.effective_camera.unwrap_or(d.camera);
    if let Some(path) = depth_out {
        let img = depth_image(&d.frames[frame - 1].observation, &cam);
        std::fs::write(path, encode_pgm16(&img, cam.width, cam.height))?;
    }
    emit(json!({
        "command": "inspect",
        "horizon": d.horizon(),
        "arm_count": d.arm_count,
        "camera": d.camera,
        "effective_camera": d.effective_camera,
        "points_per_frame": points,
        "bypass_labels": d.bypass_labels,
    }))
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = resolved_config(&cli.command)?;
    if cli.print_config {
        print!("{}", cfg.unwrap_or_default().to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = cfg.unwrap_or_default();
    match &cli.command {
        Command::Synth { spec, out, .. } => synth(spec, out, &cfg)?,
        Command::Parse {
            demo, tracking, out, ..
        } => parse(demo, tracking, out, &cfg)?,
        Command::Annotate {
            frames,
            out,
            port,
            objects,
            ui,
        } => {
            let svc = ServiceConfig {
                frame_dir: frames.clone(),
                out_path: out.clone(),
                objects: *objects,
                ui_dir: ui.clone(),
            };
            tokio::runtime::Runtime::new()?.block_on(serve(svc, *port))?;
        }
        Command::Generate {
            scene,
            annotation,
            out,
            camera_aware,
            ..
        } => generate(scene, annotation, out, *camera_aware, &cfg)?,
        Command::Process { input, out, scene, .. } => process(input, out, scene.as_deref(), &cfg)?,
        Command::Validate {
            dataset,
            scene,
            annotation,
            ..
        } => {
            if !validate(dataset, scene, annotation, &cfg)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Inspect {
            demo,
            frame,
            depth_out,
        } => inspect(demo, *frame, depth_out.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
