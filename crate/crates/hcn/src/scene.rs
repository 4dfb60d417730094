//! Scene and question data model plus file I/O.
//!
//! Scenes are segmented point clouds: every point optionally belongs to one
//! object (id `-1` marks unsegmented background such as floors and walls).
//! Questions reference a scene, a non-empty set of target object ids, and
//! optionally a set of anchor ids (objects mentioned in the question that
//! help localize the target).
//!
//! File formats:
//! - scene: one JSON object per file (see [`SceneRecord`]);
//! - questions: JSONL, one [`QuestionRecord`] per line;
//! - answer vocabulary: plain text, one answer per line, index = line number.
//!
//! Writers emit a canonical encoding (compact JSON, fixed field order,
//! sorted id sets, trailing newline) so that load→write round-trips are
//! byte-identical.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One segmented object: id, lowercase label, and free-form attributes
/// such as `color -> "brown"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: i64,
    pub label: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// A point cloud with per-point object ids and an object table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub points: Vec<(f64, f64, f64)>,
    pub point_object_ids: Vec<i64>,
    pub objects: Vec<ObjectRecord>,
}

/// Axis-aligned x–y extent of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// One question: text, accepted answers, target ids, optional anchor ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub scene_id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub target_ids: BTreeSet<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_ids: Option<BTreeSet<i64>>,
}

impl SceneRecord {
    /// Checks every type invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        let ctx = format!("scene {}", self.scene_id);
        if self.points.is_empty() {
            return Err(Error::validation(ctx, "points", "must be non-empty"));
        }
        if self.point_object_ids.len() != self.points.len() {
            return Err(Error::validation(
                ctx,
                "point_object_ids",
                format!(
                    "length {} does not match points length {}",
                    self.point_object_ids.len(),
                    self.points.len()
                ),
            ));
        }
        let mut ids = HashSet::new();
        for obj in &self.objects {
            if obj.id < 0 {
                return Err(Error::validation(
                    ctx,
                    "objects.id",
                    format!("object id {} must be non-negative", obj.id),
                ));
            }
            if obj.label.is_empty() {
                return Err(Error::validation(
                    ctx,
                    "objects.label",
                    format!("object {} has an empty label", obj.id),
                ));
            }
            if obj.label != obj.label.to_lowercase() {
                return Err(Error::validation(
                    ctx,
                    "objects.label",
                    format!("object {} label `{}` must be lowercase", obj.id, obj.label),
                ));
            }
            if !ids.insert(obj.id) {
                return Err(Error::validation(
                    ctx,
                    "objects.id",
                    format!("duplicate object id {}", obj.id),
                ));
            }
        }
        let mut owned: HashSet<i64> = HashSet::new();
        for (i, &pid) in self.point_object_ids.iter().enumerate() {
            if pid >= 0 {
                if !ids.contains(&pid) {
                    return Err(Error::validation(
                        ctx,
                        "point_object_ids",
                        format!("point {i} references object id {pid} with no object record"),
                    ));
                }
                owned.insert(pid);
            } else if pid != -1 {
                return Err(Error::validation(
                    ctx,
                    "point_object_ids",
                    format!("point {i} has id {pid}; only -1 marks background"),
                ));
            }
        }
        for obj in &self.objects {
            if !owned.contains(&obj.id) {
                return Err(Error::validation(
                    ctx,
                    "objects",
                    format!("object {} owns no points", obj.id),
                ));
            }
        }
        Ok(())
    }

    /// The object table position of `id`, if present.
    pub fn object_index(&self, id: i64) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn object(&self, id: i64) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Indices of the points owned by object `id`.
    pub fn points_of(&self, id: i64) -> impl Iterator<Item = usize> + '_ {
        self.point_object_ids
            .iter()
            .enumerate()
            .filter(move |(_, &pid)| pid == id)
            .map(|(i, _)| i)
    }

    /// Mean point position of object `id` (objects own >= 1 point).
    pub fn centroid(&self, id: i64) -> Option<(f64, f64, f64)> {
        let mut sum = (0.0, 0.0, 0.0);
        let mut count = 0usize;
        for i in self.points_of(id) {
            let p = self.points[i];
            sum.0 += p.0;
            sum.1 += p.1;
            sum.2 += p.2;
            count += 1;
        }
        if count == 0 {
            return None;
        }
        let n = count as f64;
        Some((sum.0 / n, sum.1 / n, sum.2 / n))
    }
}

impl QuestionRecord {
    /// Invariants that do not need the scene: non-empty answers and
    /// targets, targets disjoint from anchors.
    pub fn validate(&self) -> Result<()> {
        let ctx = format!("question {}", self.question_id);
        if self.answers.is_empty() {
            return Err(Error::validation(ctx, "answers", "must be non-empty"));
        }
        if self.target_ids.is_empty() {
            return Err(Error::validation(ctx, "target_ids", "must be non-empty"));
        }
        if let Some(anchors) = &self.anchor_ids {
            if let Some(id) = self.target_ids.intersection(anchors).next() {
                return Err(Error::validation(
                    ctx,
                    "anchor_ids",
                    format!("id {id} appears in both target_ids and anchor_ids"),
                ));
            }
        }
        Ok(())
    }

    /// Cross-checks every referenced id against the scene's object table.
    pub fn validate_against(&self, scene: &SceneRecord) -> Result<()> {
        self.validate()?;
        let all = self
            .target_ids
            .iter()
            .chain(self.anchor_ids.iter().flatten());
        for &id in all {
            if scene.object_index(id).is_none() {
                return Err(Error::UnknownId {
                    scene_id: scene.scene_id.clone(),
                    id,
                });
            }
        }
        Ok(())
    }
}

/// Ordered answer vocabulary with a string→index lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    pub fn new(answers: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, a) in answers.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::validation(
                    "answer vocab",
                    "answers",
                    format!("duplicate answer `{a}`"),
                ));
            }
        }
        Ok(AnswerVocab { answers, index })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answer(&self, idx: usize) -> Option<&str> {
        self.answers.get(idx).map(|s| s.as_str())
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::new(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.answers.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Loads and validates a scene JSON file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneRecord> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let scene: SceneRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    scene.validate()?;
    Ok(scene)
}

/// Writes a scene in canonical form: compact JSON, trailing newline.
pub fn save_scene(scene: &SceneRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(scene).expect("scene serialization cannot fail");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a questions JSONL file. When `scenes` is supplied, every record is
/// cross-validated against its scene; otherwise only record-local
/// invariants are checked.
pub fn load_questions(
    path: impl AsRef<Path>,
    scenes: Option<&HashMap<String, SceneRecord>>,
) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: Some(lineno + 1),
            message: e.to_string(),
        })?;
        match scenes {
            Some(index) => {
                let scene = index.get(&q.scene_id).ok_or_else(|| Error::Parse {
                    path: path.display().to_string(),
                    line: Some(lineno + 1),
                    message: format!("unknown scene_id `{}`", q.scene_id),
                })?;
                q.validate_against(scene)?;
            }
            None => q.validate()?,
        }
        out.push(q);
    }
    Ok(out)
}

/// Writes questions in canonical JSONL form.
pub fn save_questions(questions: &[QuestionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for q in questions {
        text.push_str(&serde_json::to_string(q).expect("question serialization cannot fail"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads every `*.json` scene under a directory, keyed by scene_id.
pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<HashMap<String, SceneRecord>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut scenes = HashMap::new();
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let scene = load_scene(&path)?;
        scenes.insert(scene.scene_id.clone(), scene);
    }
    Ok(scenes)
}

/// The x–y bounding box of a scene's points. Bounds are attained by some
/// point; a single point yields a degenerate (zero-extent) box.
pub fn scene_bbox(scene: &SceneRecord) -> Bbox {
    debug_assert!(!scene.points.is_empty());
    let mut bbox = Bbox {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for &(x, y, _) in &scene.points {
        bbox.x_min = bbox.x_min.min(x);
        bbox.x_max = bbox.x_max.max(x);
        bbox.y_min = bbox.y_min.min(y);
        bbox.y_max = bbox.y_max.max(y);
    }
    bbox
}
