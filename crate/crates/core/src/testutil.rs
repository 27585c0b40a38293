//! Fixtures shared by unit tests.

use crate::annotation::AnnotationSet;
use crate::demo::ParsedScene;
use crate::scene::parse_scene;
use crate::synth::{make_scene, SceneSpec, SynthScene};

pub const PICK_PLACE: &str = include_str!("../../../scenes/pick_place.toml");
pub const BRIDGE: &str = include_str!("../../../scenes/bridge.toml");

/// Synthetic scene, its parse and its scripted annotation.
pub fn parsed(spec: &str, seed: u64) -> (SynthScene, ParsedScene, AnnotationSet) {
    let synth = make_scene(&SceneSpec::from_toml(spec).unwrap(), seed).unwrap();
    let scene = parse_scene(&synth.demo, &synth.templates, &synth.tracking, 0.005).unwrap();
    let ann = synth.annotation.clone();
    (synth, scene, ann)
}
