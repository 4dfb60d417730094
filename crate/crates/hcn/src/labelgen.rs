//! Nested object-mask pseudo-labels: BoI, OoI, OoT.
//!
//! Given a scene and a question, three object-level masks are derived,
//! each a strict narrowing of the previous:
//!
//! 1. **BoI** — the scene's x–y bounding box is divided into an `S`×`S`
//!    grid; a cell is a block of interest if any point of a target or
//!    anchor object falls in it, and the mask selects every object with at
//!    least one point in such a cell;
//! 2. **OoI** — the target and anchor objects themselves;
//! 3. **OoT** — the target objects only.
//!
//! Anchors are the objects mentioned in the question. They come either
//! from the question's annotation or from matching object labels against
//! the question text, depending on [`AnchorSource`].

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{scene_bbox, Bbox, QuestionRecord, SceneRecord};

/// How anchors are extracted from a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    /// The question's `anchor_ids` annotation; empty set when absent.
    Annotation,
    /// Objects whose label occurs as a whole word in the question
    /// (case-insensitive, trailing-"s" plurals stripped), minus targets.
    LabelMatch,
    /// Union of both.
    Union,
    /// Annotation when the record carries one, label matching otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGenConfig {
    pub grid_size: usize,
    pub anchor_source: AnchorSource,
}

impl Default for LabelGenConfig {
    fn default() -> Self {
        LabelGenConfig {
            grid_size: 5,
            anchor_source: AnchorSource::Auto,
        }
    }
}

impl LabelGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 1 {
            return Err(Error::Config("grid_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A grid cell; `row` indexes y, `col` indexes x, both in `[0, S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

/// The three nested masks over a scene's objects, in object-table order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTriple {
    pub boi: Vec<bool>,
    pub ooi: Vec<bool>,
    pub oot: Vec<bool>,
    pub boi_cells: BTreeSet<CellIndex>,
}

impl MaskTriple {
    /// Element-wise nesting: oot ⊆ ooi ⊆ boi, and oot non-empty.
    pub fn validate(&self) -> Result<()> {
        let n = self.boi.len();
        if self.ooi.len() != n || self.oot.len() != n {
            return Err(Error::validation(
                "mask triple",
                "masks",
                "boi/ooi/oot lengths differ",
            ));
        }
        for i in 0..n {
            if self.oot[i] && !self.ooi[i] {
                return Err(Error::validation(
                    "mask triple",
                    "oot",
                    format!("object index {i} selected in oot but not ooi"),
                ));
            }
            if self.ooi[i] && !self.boi[i] {
                return Err(Error::validation(
                    "mask triple",
                    "ooi",
                    format!("object index {i} selected in ooi but not boi"),
                ));
            }
        }
        if !self.oot.iter().any(|&b| b) {
            return Err(Error::validation("mask triple", "oot", "must be non-empty"));
        }
        Ok(())
    }
}

/// Maps a point to its grid cell. Cells are lower-closed/upper-open with
/// the max boundary clamped into the last cell; a zero-extent axis maps
/// everything to index 0.
pub fn cell_of_point(p: (f64, f64), bbox: Bbox, grid_size: usize) -> CellIndex {
    let axis = |v: f64, lo: f64, hi: f64| -> usize {
        let extent = hi - lo;
        if extent <= 0.0 {
            return 0;
        }
        let h = extent / grid_size as f64;
        (((v - lo) / h).floor() as isize).clamp(0, grid_size as isize - 1) as usize
    };
    CellIndex {
        row: axis(p.1, bbox.y_min, bbox.y_max),
        col: axis(p.0, bbox.x_min, bbox.x_max),
    }
}

/// Lowercased alphanumeric word split; the one tokenization used for
/// anchor extraction, featurization, and metric canonicalization.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Whole-word match of a (possibly multi-word) label against question
/// tokens; the final label word also matches its trailing-"s" plural.
fn label_mentioned(label: &str, tokens: &[String]) -> bool {
    let words: Vec<&str> = label.split_whitespace().collect();
    if words.is_empty() {
        return false;
    }
    'outer: for start in 0..tokens.len() {
        if start + words.len() > tokens.len() {
            break;
        }
        for (k, word) in words.iter().enumerate() {
            let tok = tokens[start + k].as_str();
            let plural_ok = k == words.len() - 1
                && tok.len() == word.len() + 1
                && tok.starts_with(word)
                && tok.ends_with('s');
            if tok != *word && !plural_ok {
                continue 'outer;
            }
        }
        return true;
    }
    false
}

/// The anchor id set for a question under the configured source.
pub fn extract_anchors(
    q: &QuestionRecord,
    scene: &SceneRecord,
    cfg: &LabelGenConfig,
) -> BTreeSet<i64> {
    let annotated = || q.anchor_ids.clone().unwrap_or_default();
    let matched = || {
        let tokens = tokenize_lower(&q.question);
        scene
            .objects
            .iter()
            .filter(|o| !q.target_ids.contains(&o.id) && label_mentioned(&o.label, &tokens))
            .map(|o| o.id)
            .collect::<BTreeSet<i64>>()
    };
    match cfg.anchor_source {
        AnchorSource::Annotation => annotated(),
        AnchorSource::LabelMatch => matched(),
        AnchorSource::Union => annotated().union(&matched()).copied().collect(),
        AnchorSource::Auto => {
            if q.anchor_ids.is_some() {
                annotated()
            } else {
                matched()
            }
        }
    }
}

fn check_ids(scene: &SceneRecord, ids: &BTreeSet<i64>) -> Result<()> {
    for &id in ids {
        if scene.object_index(id).is_none() {
            return Err(Error::UnknownId {
                scene_id: scene.scene_id.clone(),
                id,
            });
        }
    }
    Ok(())
}

/// BoI mask and the set of blocks of interest.
///
/// A cell is a block of interest if it contains any point of a target or
/// anchor object; the mask then selects every object owning at least one
/// point in such a cell. Background points (id -1) neither create cells
/// nor get selected.
pub fn compute_boi(
    scene: &SceneRecord,
    target_ids: &BTreeSet<i64>,
    anchor_ids: &BTreeSet<i64>,
    cfg: &LabelGenConfig,
) -> Result<(Vec<bool>, BTreeSet<CellIndex>)> {
    cfg.validate()?;
    check_ids(scene, target_ids)?;
    check_ids(scene, anchor_ids)?;
    let bbox = scene_bbox(scene);
    let interest = |id: i64| target_ids.contains(&id) || anchor_ids.contains(&id);

    let cells: Vec<CellIndex> = scene
        .points
        .iter()
        .map(|&(x, y, _)| cell_of_point((x, y), bbox, cfg.grid_size))
        .collect();

    let mut boi_cells = BTreeSet::new();
    for (i, &pid) in scene.point_object_ids.iter().enumerate() {
        if pid >= 0 && interest(pid) {
            boi_cells.insert(cells[i]);
        }
    }

    let mut boi = vec![false; scene.objects.len()];
    for (i, &pid) in scene.point_object_ids.iter().enumerate() {
        if pid >= 0 && boi_cells.contains(&cells[i]) {
            if let Some(j) = scene.object_index(pid) {
                boi[j] = true;
            }
        }
    }
    Ok((boi, boi_cells))
}

/// OoI mask: targets and anchors.
pub fn compute_ooi(
    scene: &SceneRecord,
    target_ids: &BTreeSet<i64>,
    anchor_ids: &BTreeSet<i64>,
) -> Result<Vec<bool>> {
    check_ids(scene, target_ids)?;
    check_ids(scene, anchor_ids)?;
    Ok(scene
        .objects
        .iter()
        .map(|o| target_ids.contains(&o.id) || anchor_ids.contains(&o.id))
        .collect())
}

/// OoT mask: targets only.
pub fn compute_oot(scene: &SceneRecord, target_ids: &BTreeSet<i64>) -> Result<Vec<bool>> {
    check_ids(scene, target_ids)?;
    Ok(scene
        .objects
        .iter()
        .map(|o| target_ids.contains(&o.id))
        .collect())
}

/// Composes anchor extraction and the three mask phases for one question.
pub fn generate_labels(
    scene: &SceneRecord,
    q: &QuestionRecord,
    cfg: &LabelGenConfig,
) -> Result<MaskTriple> {
    q.validate_against(scene)?;
    let mut anchors = extract_anchors(q, scene, cfg);
    // Label matching can only produce ids present in the scene, but
    // annotations are caller data.
    check_ids(scene, &anchors)?;
    anchors.retain(|id| !q.target_ids.contains(id));

    let (boi, boi_cells) = compute_boi(scene, &q.target_ids, &anchors, cfg)?;
    let ooi = compute_ooi(scene, &q.target_ids, &anchors)?;
    let oot = compute_oot(scene, &q.target_ids)?;
    let triple = MaskTriple {
        boi,
        ooi,
        oot,
        boi_cells,
    };
    triple.validate()?;
    Ok(triple)
}

/// On-disk form of one question's masks: sorted object ids per phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub question_id: String,
    pub boi: Vec<i64>,
    pub ooi: Vec<i64>,
    pub oot: Vec<i64>,
    pub boi_cells: Vec<(usize, usize)>,
    pub grid_size: usize,
}

impl LabelRecord {
    pub fn from_masks(
        scene: &SceneRecord,
        question_id: &str,
        masks: &MaskTriple,
        grid_size: usize,
    ) -> Self {
        let ids = |mask: &[bool]| {
            let mut v: Vec<i64> = mask
                .iter()
                .zip(&scene.objects)
                .filter(|(&m, _)| m)
                .map(|(_, o)| o.id)
                .collect();
            v.sort_unstable();
            v
        };
        LabelRecord {
            question_id: question_id.to_string(),
            boi: ids(&masks.boi),
            ooi: ids(&masks.ooi),
            oot: ids(&masks.oot),
            boi_cells: masks.boi_cells.iter().map(|c| (c.row, c.col)).collect(),
            grid_size,
        }
    }
}

/// Writes label records as canonical JSONL.
pub fn write_labels(labels: &[LabelRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for rec in labels {
        text.push_str(&serde_json::to_string(rec).expect("label serialization cannot fail"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: Some(lineno + 1),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Mean/median selected-object counts per phase over a label corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub questions: usize,
    pub mean_boi: f64,
    pub median_boi: f64,
    pub mean_ooi: f64,
    pub median_ooi: f64,
    pub mean_oot: f64,
    pub median_oot: f64,
}

pub fn label_stats(labels: &[LabelRecord]) -> LabelStats {
    fn mean_median(mut counts: Vec<usize>) -> (f64, f64) {
        if counts.is_empty() {
            return (0.0, 0.0);
        }
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        counts.sort_unstable();
        let n = counts.len();
        let median = if n % 2 == 1 {
            counts[n / 2] as f64
        } else {
            (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
        };
        (mean, median)
    }
    let (mean_boi, median_boi) = mean_median(labels.iter().map(|l| l.boi.len()).collect());
    let (mean_ooi, median_ooi) = mean_median(labels.iter().map(|l| l.ooi.len()).collect());
    let (mean_oot, median_oot) = mean_median(labels.iter().map(|l| l.oot.len()).collect());
    LabelStats {
        questions: labels.len(),
        mean_boi,
        median_boi,
        mean_ooi,
        median_ooi,
        mean_oot,
        median_oot,
    }
}
