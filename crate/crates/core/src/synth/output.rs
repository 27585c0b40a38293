//! On-disk layout of a synthetic scene.
//!
//! ```text
//! spec.toml, synth.json   the spec and seed that reproduce everything below
//! demo/                   raw demonstration container
//! tracking/               environment o_0, templates, poses, non-rigid clouds
//! annotation.json
//! frames/000001.ppm       color frames for the annotation UI
//! depth/000001.pgm        ground-truth depth, 16-bit millimeters
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{make_scene, SceneSpec, SpecError, SynthScene};
use crate::container::{save_demonstration, save_tracking, ContainerError};
use crate::image::{color_image, encode_pgm16, encode_ppm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct SynthMeta {
    seed: u64,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|source| ContainerError::Io {
            path: p.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `scene` (made from `spec_text` with `seed`) under `out`.
pub fn save_synth(scene: &SynthScene, spec_text: &str, seed: u64, out: &Path) -> Result<(), ContainerError> {
    write(&out.join("spec.toml"), spec_text.as_bytes())?;
    write(
        &out.join("synth.json"),
        (serde_json::to_string(&SynthMeta { seed }).expect("meta serializes") + "\n").as_bytes(),
    )?;
    save_demonstration(&scene.demo, &out.join("demo"))?;
    save_tracking(&scene.tracking, &scene.templates, &out.join("tracking"))?;
    write(&out.join("annotation.json"), (scene.annotation.to_json_string() + "\n").as_bytes())?;
    let cam = scene.demo.camera;
    for (i, f) in scene.demo.frames.iter().enumerate() {
        let name = format!("{:06}", i + 1);
        let rgb = color_image(&f.observation, &cam);
        write(&out.join("frames").join(format!("{name}.ppm")), &encode_ppm(&rgb, cam.width, cam.height))?;
        write(
            &out.join("depth").join(format!("{name}.pgm")),
            &encode_pgm16(&scene.depth[i], cam.width, cam.height),
        )?;
    }
    Ok(())
}

/// Rebuilds the scene stored under `dir` from its spec and seed.
pub fn reload_synth(dir: &Path) -> Result<(SceneSpec, u64, SynthScene), SpecError> {
    let spec = SceneSpec::load(&dir.join("spec.toml"))?;
    let text = fs::read_to_string(dir.join("synth.json")).map_err(|e| SpecError::Parse(e.to_string()))?;
    let meta: SynthMeta = serde_json::from_str(&text).map_err(|e| SpecError::Parse(e.to_string()))?;
    let scene = make_scene(&spec, meta.seed)?;
    Ok((spec, meta.seed, scene))
}
