//! Skill/motion annotation files.
//!
//! The file is JSON with `masks`, `arms` and `annotations`. Each annotation
//! entry opens a segment at its `frame`; the segment runs until the next entry
//! begins (the last one runs to the end of the demonstration). The first
//! segment always starts at frame 1 whatever its declared frame. Skill entries
//! carry `target` plus `hand` (single arm) or `left_hand`/`right_hand`
//! (bimanual); `null` stands for the empty set.

mod lenient;
pub mod service;

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

pub use lenient::insert_missing_commas;

pub type IdSet = BTreeSet<u16>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("InterleaveError: {0}")]
    Interleave(String),
    #[error("RangeError: {0}")]
    Range(String),
    #[error("io: {0}")]
    Io(String),
}

impl AnnotationError {
    /// Error class name used by the HTTP service.
    pub fn class(&self) -> &'static str {
        match self {
            AnnotationError::Schema(_) => "SchemaError",
            AnnotationError::Interleave(_) => "InterleaveError",
            AnnotationError::Range(_) => "RangeError",
            AnnotationError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Motion,
    Skill,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Declared `frame` value of the entry.
    pub marker: usize,
    /// Inclusive, 1-based.
    pub start: usize,
    pub end: usize,
    pub target: IdSet,
    /// In-hand ids per arm (left first). Empty for motion segments.
    pub hands: Vec<IdSet>,
}

impl Segment {
    pub fn motion(start: usize, end: usize) -> Self {
        Segment {
            kind: SegmentKind::Motion,
            marker: start,
            start,
            end,
            target: IdSet::new(),
            hands: Vec::new(),
        }
    }

    pub fn skill(start: usize, end: usize, target: IdSet, hands: Vec<IdSet>) -> Self {
        Segment {
            kind: SegmentKind::Skill,
            marker: start,
            start,
            end,
            target,
            hands,
        }
    }

    pub fn is_skill(&self) -> bool {
        self.kind == SegmentKind::Skill
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    /// Union of in-hand ids over all arms.
    pub fn in_hand(&self) -> IdSet {
        self.hands.iter().flatten().copied().collect()
    }

    /// Target and in-hand ids together.
    pub fn group(&self) -> IdSet {
        self.target.union(&self.in_hand()).copied().collect()
    }

    /// The object held by both arms, when left and right hands agree and are non-empty.
    pub fn shared_hand(&self) -> Option<&IdSet> {
        match self.hands.as_slice() {
            [l, r] if !l.is_empty() && l == r => Some(l),
            _ => None,
        }
    }
}

/// What to do with a motion segment that follows the last skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrailingMotion {
    /// Drop it and shorten the horizon, with a warning.
    #[default]
    Trim,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub masks: Vec<String>,
    pub arm_count: usize,
    pub segments: Vec<Segment>,
}

impl AnnotationSet {
    /// Frames covered by the segments.
    pub fn horizon(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn skills(&self) -> Vec<&Segment> {
        self.segments.iter().filter(|s| s.is_skill()).collect()
    }

    /// Motion segment preceding skill `i` (0-based skill index).
    pub fn motion_before(&self, skill: usize) -> &Segment {
        &self.segments[2 * skill]
    }

    pub fn skill(&self, i: usize) -> &Segment {
        &self.segments[2 * i + 1]
    }

    pub fn skill_count(&self) -> usize {
        self.segments.len() / 2
    }

    /// Checks structure: alternation, tiling of `[1, horizon]`, arm fields and id range.
    pub fn validate(&self, object_count: usize) -> Result<(), AnnotationError> {
        if !(1..=2).contains(&self.arm_count) {
            return Err(AnnotationError::Schema(format!(
                "\"arms\" must be 1 or 2, got {}",
                self.arm_count
            )));
        }
        if self.segments.is_empty() {
            return Err(AnnotationError::Interleave("no segments".into()));
        }
        let mut next_start = 1;
        for (i, s) in self.segments.iter().enumerate() {
            let want = if i % 2 == 0 {
                SegmentKind::Motion
            } else {
                SegmentKind::Skill
            };
            if s.kind != want {
                return Err(AnnotationError::Interleave(format!(
                    "entry {i} is a {:?} but a {:?} was expected",
                    s.kind, want
                )));
            }
            if s.start != next_start || s.end < s.start {
                return Err(AnnotationError::Range(format!(
                    "entry {i} spans [{}, {}], expected to start at {next_start}",
                    s.start, s.end
                )));
            }
            next_start = s.end + 1;
            if s.is_skill() {
                if s.hands.len() != self.arm_count {
                    return Err(AnnotationError::Schema(format!(
                        "entry {i} has {} hand sets for {} arms",
                        s.hands.len(),
                        self.arm_count
                    )));
                }
                for id in s.target.iter().chain(s.hands.iter().flatten()) {
                    if *id == 0 || *id as usize > object_count {
                        return Err(AnnotationError::Range(format!(
                            "entry {i} references object {id}, valid ids are 1..={object_count}"
                        )));
                    }
                }
            }
        }
        if self.segments.last().unwrap().kind != SegmentKind::Skill {
            return Err(AnnotationError::Interleave(
                "annotation must end with a skill".into(),
            ));
        }
        Ok(())
    }

    /// JSON in the annotation file schema.
    pub fn to_json(&self) -> Value {
        let annotations: Vec<Value> = self
            .segments
            .iter()
            .map(|s| {
                let mut m = Map::new();
                m.insert("frame".into(), Value::from(s.marker));
                let kind = match s.kind {
                    SegmentKind::Motion => "motion",
                    SegmentKind::Skill => "skill",
                };
                m.insert("type".into(), Value::from(kind));
                if s.is_skill() {
                    m.insert("target".into(), ids_to_json(&s.target));
                    if self.arm_count == 1 {
                        m.insert("hand".into(), ids_to_json(&s.hands[0]));
                    } else {
                        m.insert("left_hand".into(), ids_to_json(&s.hands[0]));
                        m.insert("right_hand".into(), ids_to_json(&s.hands[1]));
                    }
                }
                Value::Object(m)
            })
            .collect();
        let mut root = Map::new();
        root.insert(
            "masks".into(),
            Value::Array(self.masks.iter().map(|m| Value::from(m.as_str())).collect()),
        );
        root.insert("arms".into(), Value::from(self.arm_count));
        root.insert("annotations".into(), Value::Array(annotations));
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("annotation serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        std::fs::write(path, self.to_json_string() + "\n")
            .map_err(|e| AnnotationError::Io(format!("{}: {e}", path.display())))
    }
}

fn ids_to_json(ids: &IdSet) -> Value {
    if ids.is_empty() {
        Value::Null
    } else {
        Value::Array(ids.iter().map(|&i| Value::from(i)).collect())
    }
}

fn ids_from_json(entry: &Map<String, Value>, field: &str, idx: usize) -> Result<IdSet, AnnotationError> {
    match entry.get(field) {
        None => Err(AnnotationError::Schema(format!(
            "entry {idx} is missing \"{field}\""
        ))),
        Some(Value::Null) => Ok(IdSet::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_u64()
                    .filter(|&n| n <= u16::MAX as u64)
                    .map(|n| n as u16)
                    .ok_or_else(|| {
                        AnnotationError::Schema(format!(
                            "entry {idx} field \"{field}\" holds a non-id value {v}"
                        ))
                    })
            })
            .collect(),
        Some(other) => Err(AnnotationError::Schema(format!(
            "entry {idx} field \"{field}\" must be a list or null, got {other}"
        ))),
    }
}

/// Parses annotation text against `object_count` objects and a demonstration
/// of `horizon` frames.
pub fn parse_annotation_str(
    text: &str,
    object_count: usize,
    horizon: usize,
    trailing: TrailingMotion,
) -> Result<AnnotationSet, AnnotationError> {
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(first) => serde_json::from_str(&insert_missing_commas(text))
            .map_err(|_| AnnotationError::Schema(format!("invalid JSON: {first}")))?,
    };
    parse_annotation_value(&root, object_count, horizon, trailing)
}

pub fn parse_annotation_value(
    root: &Value,
    object_count: usize,
    horizon: usize,
    trailing: TrailingMotion,
) -> Result<AnnotationSet, AnnotationError> {
    let schema = |m: &str| AnnotationError::Schema(m.to_string());
    let root = root.as_object().ok_or_else(|| schema("top level must be an object"))?;
    let masks = root
        .get("masks")
        .ok_or_else(|| schema("missing \"masks\""))?
        .as_array()
        .ok_or_else(|| schema("\"masks\" must be a list"))?
        .iter()
        .map(|m| m.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| schema("\"masks\" must hold file names"))?;
    let arm_count = root
        .get("arms")
        .ok_or_else(|| schema("missing \"arms\""))?
        .as_u64()
        .filter(|a| (1..=2).contains(a))
        .ok_or_else(|| schema("\"arms\" must be 1 or 2"))? as usize;
    let entries = root
        .get("annotations")
        .ok_or_else(|| schema("missing \"annotations\""))?
        .as_array()
        .ok_or_else(|| schema("\"annotations\" must be a list"))?;
    if entries.is_empty() {
        return Err(AnnotationError::Interleave("no annotation entries".into()));
    }

    struct Entry {
        kind: SegmentKind,
        frame: usize,
        target: IdSet,
        hands: Vec<IdSet>,
    }
    let mut parsed = Vec::with_capacity(entries.len());
    for (idx, e) in entries.iter().enumerate() {
        let e = e
            .as_object()
            .ok_or_else(|| AnnotationError::Schema(format!("entry {idx} must be an object")))?;
        let frame = e
            .get("frame")
            .ok_or_else(|| AnnotationError::Schema(format!("entry {idx} is missing \"frame\"")))?
            .as_u64()
            .ok_or_else(|| {
                AnnotationError::Schema(format!("entry {idx} \"frame\" must be a non-negative integer"))
            })? as usize;
        let kind = match e.get("type").and_then(Value::as_str) {
            Some("motion") => SegmentKind::Motion,
            Some("skill") => SegmentKind::Skill,
            Some(other) => {
                return Err(AnnotationError::Schema(format!(
                    "entry {idx} has unknown type {other:?}"
                )))
            }
            None => {
                return Err(AnnotationError::Schema(format!(
                    "entry {idx} is missing \"type\""
                )))
            }
        };
        let (target, hands) = if kind == SegmentKind::Skill {
            let target = ids_from_json(e, "target", idx)?;
            let hands = if arm_count == 1 {
                if e.contains_key("left_hand") || e.contains_key("right_hand") {
                    return Err(AnnotationError::Schema(format!(
                        "entry {idx} uses bimanual hand fields in a single-arm file"
                    )));
                }
                vec![ids_from_json(e, "hand", idx)?]
            } else {
                if e.contains_key("hand") {
                    return Err(AnnotationError::Schema(format!(
                        "entry {idx} uses \"hand\" in a bimanual file"
                    )));
                }
                vec![
                    ids_from_json(e, "left_hand", idx)?,
                    ids_from_json(e, "right_hand", idx)?,
                ]
            };
            (target, hands)
        } else {
            (IdSet::new(), Vec::new())
        };
        parsed.push(Entry {
            kind,
            frame,
            target,
            hands,
        });
    }

    // structural checks in file order so the first offending entry is reported
    for (idx, e) in parsed.iter().enumerate() {
        if e.frame == 0 || e.frame > horizon {
            return Err(AnnotationError::Range(format!(
                "entry {idx} frame {} outside [1, {horizon}]",
                e.frame
            )));
        }
        if idx > 0 && e.frame <= parsed[idx - 1].frame {
            return Err(AnnotationError::Range(format!(
                "entry {idx} frame {} does not follow frame {}",
                e.frame,
                parsed[idx - 1].frame
            )));
        }
        if idx == 0 && e.kind != SegmentKind::Motion {
            return Err(AnnotationError::Interleave(
                "first entry must be a motion".into(),
            ));
        }
        if idx > 0 && e.kind == parsed[idx - 1].kind {
            return Err(AnnotationError::Interleave(format!(
                "entries {} and {idx} are both {:?}",
                idx - 1,
                e.kind
            )));
        }
        for id in e.target.iter().chain(e.hands.iter().flatten()) {
            if *id == 0 || *id as usize > object_count {
                return Err(AnnotationError::Range(format!(
                    "entry {idx} references object {id}, valid ids are 1..={object_count}"
                )));
            }
        }
    }

    let mut end = horizon;
    if parsed.last().unwrap().kind == SegmentKind::Motion {
        let last = parsed.last().unwrap();
        match trailing {
            TrailingMotion::Reject => {
                return Err(AnnotationError::Interleave(format!(
                    "trailing motion at frame {} after the last skill",
                    last.frame
                )))
            }
            TrailingMotion::Trim => {
                log::warn!(
                    "dropping trailing motion segment at frames {}..={horizon}",
                    last.frame
                );
                end = last.frame - 1;
                parsed.pop();
            }
        }
    }
    if parsed.len() < 2 {
        return Err(AnnotationError::Interleave(
            "annotation holds no skill".into(),
        ));
    }

    let n = parsed.len();
    let segments = parsed
        .iter()
        .enumerate()
        .map(|(i, e)| Segment {
            kind: e.kind,
            marker: e.frame,
            start: if i == 0 { 1 } else { e.frame },
            end: if i + 1 < n { parsed[i + 1].frame - 1 } else { end },
            target: e.target.clone(),
            hands: e.hands.clone(),
        })
        .collect();
    let set = AnnotationSet {
        masks,
        arm_count,
        segments,
    };
    set.validate(object_count)?;
    Ok(set)
}

pub fn parse_annotation(
    path: &Path,
    object_count: usize,
    horizon: usize,
    trailing: TrailingMotion,
) -> Result<AnnotationSet, AnnotationError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AnnotationError::Io(format!("{}: {e}", path.display())))?;
    parse_annotation_str(&text, object_count, horizon, trailing)
}
