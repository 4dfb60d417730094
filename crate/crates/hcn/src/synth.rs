//! Procedural scenes, templated questions, and the deterministic
//! featurizer that stands in for pretrained vision/language encoders.
//!
//! Scenes are small point-blob rooms where one target object sits within
//! `near_radius` of one anchor object and every distractor stays at least
//! `far_radius` from both, so "next to" always has exactly one correct
//! reading. Two question templates cover attribute lookup ("what color is
//! the chair next to the table?") and identification ("what is next to
//! the table?").
//!
//! The featurizer encodes the two modalities asymmetrically, emulating
//! how a pretrained fusion stack behaves under wording changes:
//!
//! * Object tokens carry geometry, label/color one-hots, and
//!   question-slot match flags computed on *canonicalized* words (the
//!   built-in synonym table maps "desk" back to "table"), so they are
//!   invariant to synonym substitution.
//! * Text tokens are a hashed bag of *raw* words, so any substitution
//!   moves mass to different hash buckets.
//!
//! A model that answers from the text bag alone is therefore fragile
//! under the synonym perturbation probe, while one that reads the
//! grounded object tokens is not. The optional shortcut bait plants
//! exactly such a fragile correlation: a fraction of scenes pairs a fixed
//! anchor/target label combination, and with probability `bias_rate` the
//! target really is the biased color, making the word pair alone a
//! strong-but-shallow predictor of the answer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnv::{derive_seed, fnv1a};
use crate::labelgen::tokenize_lower;
use crate::model::{MaskMode, ModelConfig};
use crate::scene::{
    load_questions, load_scene_dir, save_questions, save_scene, AnswerVocab, ObjectRecord,
    QuestionRecord, SceneRecord,
};
use crate::tensor::Tensor;

/// The two question templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// "what color is the <target> next to the <anchor>?" → a color.
    AttrColor,
    /// "what is next to the <anchor>?" → the target's label.
    IdentityNear,
}

/// A planted question→answer correlation that bypasses geometry: in a
/// `fraction` of scenes the anchor/target labels are fixed, and with
/// probability `bias_rate` the target's color really is `biased_answer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutBait {
    pub anchor_label: String,
    pub target_label: String,
    pub biased_answer: String,
    pub bias_rate: f64,
    /// Share of scenes built around the bait pair.
    #[serde(default = "default_bait_fraction")]
    pub fraction: f64,
}

fn default_bait_fraction() -> f64 {
    0.5
}

fn default_n_scenes() -> usize {
    500
}

fn default_objects_min() -> usize {
    4
}

fn default_objects_max() -> usize {
    9
}

fn default_extent() -> f64 {
    10.0
}

fn default_near_radius() -> f64 {
    0.8
}

fn default_far_radius() -> f64 {
    2.0
}

fn default_points_per_object() -> usize {
    16
}

fn default_blob_std() -> f64 {
    0.15
}

fn default_noise_std() -> f64 {
    0.01
}

fn default_d_text() -> usize {
    64
}

pub fn default_labels() -> Vec<String> {
    [
        "bed", "cabinet", "chair", "door", "lamp", "monitor", "plant", "rug", "shelf", "sofa",
        "table", "window",
    ]
    .map(str::to_string)
    .to_vec()
}

pub fn default_colors() -> Vec<String> {
    ["black", "blue", "green", "red", "white", "yellow"]
        .map(str::to_string)
        .to_vec()
}

/// Canonical word → synonyms. Doubles as the featurizer's
/// canonicalization table (inverted) and the default perturbation
/// lexicon. Synonyms are globally unique and never collide with labels.
pub fn default_lexicon() -> BTreeMap<String, Vec<String>> {
    [
        ("bed", vec!["bunk", "cot"]),
        ("cabinet", vec!["cupboard", "locker"]),
        ("chair", vec!["seat", "stool"]),
        ("door", vec!["doorway", "gate"]),
        ("lamp", vec!["light", "lantern"]),
        ("monitor", vec!["screen", "display"]),
        ("plant", vec!["fern", "shrub"]),
        ("rug", vec!["carpet", "mat"]),
        ("shelf", vec!["rack", "ledge"]),
        ("sofa", vec!["couch", "settee"]),
        ("table", vec!["desk", "counter"]),
        ("window", vec!["pane", "casement"]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.into_iter().map(str::to_string).collect()))
    .collect()
}

/// Everything needed to regenerate a corpus and its features bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_n_scenes")]
    pub n_scenes: usize,
    #[serde(default = "default_objects_min")]
    pub objects_min: usize,
    #[serde(default = "default_objects_max")]
    pub objects_max: usize,
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    #[serde(default = "default_colors")]
    pub colors: Vec<String>,
    /// Side length of the square floor plan, in meters.
    #[serde(default = "default_extent")]
    pub extent: f64,
    /// Maximum target-to-anchor centroid distance.
    #[serde(default = "default_near_radius")]
    pub near_radius: f64,
    /// Minimum distractor distance from both target and anchor.
    #[serde(default = "default_far_radius")]
    pub far_radius: f64,
    #[serde(default = "default_points_per_object")]
    pub points_per_object: usize,
    /// Standard deviation of a blob's points around its centroid.
    #[serde(default = "default_blob_std")]
    pub blob_std: f64,
    /// Feature-noise standard deviation in the featurizer.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Hashed text-token width.
    #[serde(default = "default_d_text")]
    pub d_text: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut_bait: Option<ShortcutBait>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let ctx = "synthetic spec";
        if self.n_scenes == 0 {
            return Err(Error::validation(ctx, "n_scenes", "must be ≥ 1"));
        }
        if self.objects_min < 2 {
            return Err(Error::validation(
                ctx,
                "objects_min",
                "need at least a target and an anchor",
            ));
        }
        if self.objects_max < self.objects_min {
            return Err(Error::validation(ctx, "objects_max", "below objects_min"));
        }
        if self.labels.len() < self.objects_max {
            return Err(Error::validation(
                ctx,
                "labels",
                format!(
                    "scene labels are unique, so the pool ({}) must cover objects_max ({})",
                    self.labels.len(),
                    self.objects_max
                ),
            ));
        }
        if self.colors.is_empty() {
            return Err(Error::validation(ctx, "colors", "pool is empty"));
        }
        let label_set: BTreeSet<&String> = self.labels.iter().collect();
        if label_set.len() != self.labels.len() {
            return Err(Error::validation(ctx, "labels", "pool has duplicates"));
        }
        let color_set: BTreeSet<&String> = self.colors.iter().collect();
        if color_set.len() != self.colors.len() {
            return Err(Error::validation(ctx, "colors", "pool has duplicates"));
        }
        for w in self.labels.iter().chain(self.colors.iter()) {
            if tokenize_lower(w).len() != 1 || *w != w.to_lowercase() {
                return Err(Error::validation(
                    ctx,
                    "labels/colors",
                    format!("pool words must be single lowercase tokens, got {w:?}"),
                ));
            }
        }
        let bad = |v: f64| v.is_nan() || v <= 0.0;
        if bad(self.extent)
            || bad(self.near_radius)
            || self.blob_std.is_nan()
            || self.blob_std < 0.0
        {
            return Err(Error::validation(
                ctx,
                "extent/near_radius/blob_std",
                "geometry parameters must be positive",
            ));
        }
        if self.far_radius <= self.near_radius {
            return Err(Error::validation(
                ctx,
                "far_radius",
                "must exceed near_radius or 'next to' is ambiguous",
            ));
        }
        if self.extent < 2.0 * self.far_radius {
            return Err(Error::validation(
                ctx,
                "extent",
                "too small to separate distractors from the pair",
            ));
        }
        if self.points_per_object == 0 {
            return Err(Error::validation(ctx, "points_per_object", "must be ≥ 1"));
        }
        if self.d_text == 0 {
            return Err(Error::validation(ctx, "d_text", "must be ≥ 1"));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(Error::validation(ctx, "noise_std", "must be ≥ 0"));
        }
        if let Some(bait) = &self.shortcut_bait {
            if !self.labels.contains(&bait.anchor_label) {
                return Err(Error::validation(
                    ctx,
                    "shortcut_bait.anchor_label",
                    "not in label pool",
                ));
            }
            if !self.labels.contains(&bait.target_label) {
                return Err(Error::validation(
                    ctx,
                    "shortcut_bait.target_label",
                    "not in label pool",
                ));
            }
            if bait.anchor_label == bait.target_label {
                return Err(Error::validation(
                    ctx,
                    "shortcut_bait.target_label",
                    "must differ from the anchor label",
                ));
            }
            if !self.colors.contains(&bait.biased_answer) {
                return Err(Error::validation(
                    ctx,
                    "shortcut_bait.biased_answer",
                    "must be a color from the pool (bait questions ask for color)",
                ));
            }
            if self.colors.len() < 2 {
                return Err(Error::validation(
                    ctx,
                    "colors",
                    "bait needs a second color for the unbiased remainder",
                ));
            }
            if !(0.0..=1.0).contains(&bait.bias_rate) {
                return Err(Error::validation(
                    ctx,
                    "shortcut_bait.bias_rate",
                    "must lie in [0,1]",
                ));
            }
            if !(bait.fraction > 0.0 && bait.fraction <= 1.0) {
                return Err(Error::validation(
                    ctx,
                    "shortcut_bait.fraction",
                    "must lie in (0,1]",
                ));
            }
        }
        Ok(())
    }

    /// The answer vocabulary induced by the pools: every color and every
    /// label, sorted.
    pub fn answer_vocab(&self) -> Result<AnswerVocab> {
        let mut all: Vec<String> = self
            .labels
            .iter()
            .chain(self.colors.iter())
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        AnswerVocab::new(all)
    }
}

/// One generated corpus, scenes ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub scenes: Vec<SceneRecord>,
    pub questions: Vec<QuestionRecord>,
}

struct ScenePlan {
    template: Template,
    /// (label, color, centroid) per object; index is the object id.
    objects: Vec<(String, String, (f64, f64))>,
    target: usize,
    anchor: usize,
    answer: String,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn plan_scene(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<ScenePlan> {
    let n = rng.random_range(spec.objects_min..=spec.objects_max);

    let is_bait = match &spec.shortcut_bait {
        Some(bait) => rng.random_bool(bait.fraction),
        None => false,
    };
    let template = if is_bait || rng.random_bool(0.5) {
        Template::AttrColor
    } else {
        Template::IdentityNear
    };

    // unique labels per scene keep every question unambiguous
    let mut labels: Vec<String>;
    if let (true, Some(bait)) = (is_bait, &spec.shortcut_bait) {
        labels = vec![bait.target_label.clone(), bait.anchor_label.clone()];
        let mut rest: Vec<String> = spec
            .labels
            .iter()
            .filter(|l| **l != bait.target_label && **l != bait.anchor_label)
            .cloned()
            .collect();
        rest.shuffle(rng);
        labels.extend(rest.into_iter().take(n - 2));
    } else {
        let mut pool = spec.labels.clone();
        pool.shuffle(rng);
        labels = pool.into_iter().take(n).collect();
        // keep the bait pairing exclusive to bait scenes so bias_rate is
        // exactly the answer rate conditioned on the bait question text
        if let Some(bait) = &spec.shortcut_bait {
            if labels[0] == bait.target_label && labels[1] == bait.anchor_label {
                labels.swap(0, 1);
            }
        }
    }
    let (target, anchor) = (0usize, 1usize);

    let mut colors: Vec<String> = (0..n)
        .map(|_| spec.colors[rng.random_range(0..spec.colors.len())].clone())
        .collect();
    if is_bait {
        let bait = spec.shortcut_bait.as_ref().expect("is_bait implies bait");
        if rng.random_bool(bait.bias_rate) {
            colors[target] = bait.biased_answer.clone();
        } else {
            let others: Vec<&String> = spec
                .colors
                .iter()
                .filter(|c| **c != bait.biased_answer)
                .collect();
            colors[target] = others[rng.random_range(0..others.len())].clone();
        }
    }

    // anchor well inside the room, target within near_radius of it,
    // distractors at least far_radius from both
    let margin = spec.far_radius.min(spec.extent / 4.0);
    let mut centroids: Vec<(f64, f64)> = Vec::with_capacity(n);
    let anchor_pos = (
        rng.random_range(margin..spec.extent - margin),
        rng.random_range(margin..spec.extent - margin),
    );
    let target_pos = loop {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.3 * spec.near_radius..spec.near_radius);
        let pos = (
            anchor_pos.0 + r * angle.cos(),
            anchor_pos.1 + r * angle.sin(),
        );
        if pos.0 > 0.1 && pos.0 < spec.extent - 0.1 && pos.1 > 0.1 && pos.1 < spec.extent - 0.1 {
            break pos;
        }
    };
    centroids.push(target_pos);
    centroids.push(anchor_pos);
    for _ in 2..n {
        let mut placed = false;
        for _ in 0..500 {
            let pos = (
                rng.random_range(0.1..spec.extent - 0.1),
                rng.random_range(0.1..spec.extent - 0.1),
            );
            if dist(pos, anchor_pos) >= spec.far_radius
                && dist(pos, target_pos) >= spec.far_radius
                && centroids[2..].iter().all(|&c| dist(pos, c) >= 0.5)
            {
                centroids.push(pos);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(
                "could not place a distractor; extent too small for the object count".to_string(),
            ));
        }
    }

    let answer = match template {
        Template::AttrColor => colors[target].clone(),
        Template::IdentityNear => labels[target].clone(),
    };
    let objects = labels
        .into_iter()
        .zip(colors)
        .zip(centroids)
        .map(|((l, c), pos)| (l, c, pos))
        .collect();
    Ok(ScenePlan {
        template,
        objects,
        target,
        anchor,
        answer,
    })
}

fn realize_scene(
    spec: &SyntheticSpec,
    plan: &ScenePlan,
    scene_id: String,
    rng: &mut ChaCha8Rng,
) -> Result<SceneRecord> {
    let blob = Normal::new(0.0, spec.blob_std).expect("std ≥ 0");
    let height = Normal::new(0.0, 0.2).expect("std ≥ 0");
    let mut points = Vec::new();
    let mut point_object_ids = Vec::new();
    let mut objects = Vec::new();
    for (id, (label, color, centroid)) in plan.objects.iter().enumerate() {
        for _ in 0..spec.points_per_object {
            let x = centroid.0 + blob.sample(rng);
            let y = centroid.1 + blob.sample(rng);
            let z: f64 = height.sample(rng);
            let z = z.abs();
            points.push((x, y, z));
            point_object_ids.push(id as i64);
        }
        let mut attributes = BTreeMap::new();
        attributes.insert("color".to_string(), color.clone());
        objects.push(ObjectRecord {
            id: id as i64,
            label: label.clone(),
            attributes,
        });
    }
    let scene = SceneRecord {
        scene_id,
        points,
        point_object_ids,
        objects,
    };
    scene.validate()?;
    Ok(scene)
}

fn question_text(template: Template, target_label: &str, anchor_label: &str) -> String {
    match template {
        Template::AttrColor => {
            format!("what color is the {target_label} next to the {anchor_label}?")
        }
        Template::IdentityNear => format!("what is next to the {anchor_label}?"),
    }
}

/// Generates the full corpus: one question per scene, everything seeded.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut scenes = Vec::with_capacity(spec.n_scenes);
    let mut questions = Vec::with_capacity(spec.n_scenes);
    for i in 0..spec.n_scenes {
        let scene_id = format!("scene{i:05}");
        let question_id = format!("q{i:05}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &scene_id));
        let plan = plan_scene(spec, &mut rng)?;
        let scene = realize_scene(spec, &plan, scene_id.clone(), &mut rng)?;
        let question = QuestionRecord {
            question_id,
            scene_id,
            question: question_text(
                plan.template,
                &plan.objects[plan.target].0,
                &plan.objects[plan.anchor].0,
            ),
            answers: vec![plan.answer.clone()],
            target_ids: BTreeSet::from([plan.target as i64]),
            anchor_ids: Some(BTreeSet::from([plan.anchor as i64])),
        };
        question.validate_against(&scene)?;
        scenes.push(scene);
        questions.push(question);
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        scenes,
        questions,
    })
}

impl SyntheticDataset {
    pub fn scene_by_id(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.scene_id == id)
    }

    /// Writes `scenes/*.json`, `questions.jsonl`, `vocab.txt`, and the
    /// regenerating `spec.json` under `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let scene_dir = dir.join("scenes");
        std::fs::create_dir_all(&scene_dir)
            .map_err(|e| Error::io(scene_dir.display().to_string(), e))?;
        for scene in &self.scenes {
            save_scene(scene, scene_dir.join(format!("{}.json", scene.scene_id)))?;
        }
        save_questions(&self.questions, dir.join("questions.jsonl"))?;
        self.spec.answer_vocab()?.save(dir.join("vocab.txt"))?;
        let spec_path = dir.join("spec.json");
        let mut body = serde_json::to_string(&self.spec)
            .map_err(|e| Error::Config(format!("spec serialization failed: {e}")))?;
        body.push('\n');
        std::fs::write(&spec_path, body).map_err(|e| Error::io(spec_path.display().to_string(), e))
    }

    /// Loads a directory written by [`SyntheticDataset::write_to_dir`].
    pub fn load_from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec_path = dir.join("spec.json");
        let body = std::fs::read_to_string(&spec_path)
            .map_err(|e| Error::io(spec_path.display().to_string(), e))?;
        let spec: SyntheticSpec = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: spec_path.display().to_string(),
            line: None,
            message: e.to_string(),
        })?;
        spec.validate()?;
        let by_id = load_scene_dir(dir.join("scenes"))?;
        let questions = load_questions(dir.join("questions.jsonl"), Some(&by_id))?;
        let mut scenes: Vec<SceneRecord> = by_id.into_values().collect();
        scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        Ok(SyntheticDataset {
            spec,
            scenes,
            questions,
        })
    }
}

/// Turns (scene, question) pairs into model inputs. Construction fixes
/// the pools, synonym table, and noise stream, so features depend only
/// on the dataset spec, never on who is asking.
#[derive(Debug, Clone)]
pub struct Featurizer {
    labels: Vec<String>,
    colors: Vec<String>,
    /// synonym → canonical word, inverted from the lexicon.
    canonical: BTreeMap<String, String>,
    label_set: BTreeSet<String>,
    d_text: usize,
    noise_std: f64,
    seed: u64,
    extent: f64,
}

impl Featurizer {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut canonical = BTreeMap::new();
        for (word, synonyms) in default_lexicon() {
            for syn in synonyms {
                canonical.insert(syn, word.clone());
            }
        }
        Ok(Featurizer {
            labels: spec.labels.clone(),
            colors: spec.colors.clone(),
            canonical,
            label_set: spec.labels.iter().cloned().collect(),
            d_text: spec.d_text,
            noise_std: spec.noise_std,
            seed: spec.seed,
            extent: spec.extent,
        })
    }

    /// Object-token layout:
    /// `[x/extent, y/extent, z] ++ label one-hot ++ color one-hot ++
    ///  [target_slot_match, anchor_slot_match] ++ [dist_to_anchor/extent]
    ///  ++ template one-hot`.
    pub fn object_token_width(&self) -> usize {
        3 + self.labels.len() + self.colors.len() + 2 + 1 + 2
    }

    pub fn text_token_width(&self) -> usize {
        self.d_text
    }

    fn canonicalize<'a>(&'a self, word: &'a str) -> &'a str {
        self.canonical.get(word).map(String::as_str).unwrap_or(word)
    }

    /// The question's (template, target label word, anchor label word),
    /// read off the canonicalized token stream the way a parser trained
    /// on the templates would.
    fn parse_question(&self, question: &str) -> (Template, Option<String>, Option<String>) {
        let words = tokenize_lower(question);
        let canon: Vec<&str> = words.iter().map(|w| self.canonicalize(w)).collect();
        let template = if canon.contains(&"color") {
            Template::AttrColor
        } else {
            Template::IdentityNear
        };
        let mut label_words = canon.iter().filter(|w| self.label_set.contains(**w));
        match template {
            Template::AttrColor => {
                let target = label_words.next().map(|w| w.to_string());
                let anchor = label_words.next().map(|w| w.to_string());
                (template, target, anchor)
            }
            Template::IdentityNear => {
                let anchor = label_words.next().map(|w| w.to_string());
                (template, None, anchor)
            }
        }
    }

    /// Object tokens (n × object_token_width) and text tokens
    /// (words × d_text) for one question. Noise is seeded by
    /// (dataset seed, question id), so repeated calls are bit-identical
    /// and synonym substitutions leave the object tokens untouched.
    pub fn featurize(
        &self,
        scene: &SceneRecord,
        question: &QuestionRecord,
    ) -> Result<(Tensor, Tensor)> {
        let (template, target_word, anchor_word) = self.parse_question(&question.question);
        let anchor_centroid = anchor_word
            .as_deref()
            .and_then(|w| scene.objects.iter().find(|o| o.label == w))
            .and_then(|o| scene.centroid(o.id));

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &format!("feat:{}", question.question_id),
        ));
        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).expect("std > 0");
        let perturb = |v: f64, rng: &mut ChaCha8Rng| {
            if self.noise_std > 0.0 {
                v + noise.sample(rng)
            } else {
                v
            }
        };

        let n = scene.objects.len();
        let width = self.object_token_width();
        let mut obj = Vec::with_capacity(n * width);
        for o in &scene.objects {
            let c = scene.centroid(o.id).ok_or_else(|| Error::UnknownId {
                scene_id: scene.scene_id.clone(),
                id: o.id,
            })?;
            let mut row = Vec::with_capacity(width);
            row.push(c.0 / self.extent);
            row.push(c.1 / self.extent);
            row.push(c.2);
            for l in &self.labels {
                row.push(if *l == o.label { 1.0 } else { 0.0 });
            }
            let color = o.attributes.get("color").map(String::as_str).unwrap_or("");
            for col in &self.colors {
                row.push(if col == color { 1.0 } else { 0.0 });
            }
            row.push(match &target_word {
                Some(w) if *w == o.label => 1.0,
                _ => 0.0,
            });
            row.push(match &anchor_word {
                Some(w) if *w == o.label => 1.0,
                _ => 0.0,
            });
            row.push(match anchor_centroid {
                Some(a) => dist((c.0, c.1), (a.0, a.1)) / self.extent,
                None => 1.0,
            });
            row.push(if template == Template::AttrColor {
                1.0
            } else {
                0.0
            });
            row.push(if template == Template::IdentityNear {
                1.0
            } else {
                0.0
            });
            debug_assert_eq!(row.len(), width);
            for v in row {
                obj.push(perturb(v, &mut rng));
            }
        }

        // raw words: synonym substitution moves these buckets
        let words = tokenize_lower(&question.question);
        if words.is_empty() {
            return Err(Error::validation(
                format!("question {}", question.question_id),
                "question",
                "no tokens to featurize",
            ));
        }
        let mut text = Vec::with_capacity(words.len() * self.d_text);
        for word in &words {
            let bucket = (fnv1a(word.as_bytes()) % self.d_text as u64) as usize;
            for j in 0..self.d_text {
                let v = if j == bucket { 1.0 } else { 0.0 };
                text.push(perturb(v, &mut rng));
            }
        }

        Ok((
            Tensor::matrix(n, width, obj)?,
            Tensor::matrix(words.len(), self.d_text, text)?,
        ))
    }

    /// A model configuration sized for these features.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let vocab = {
            let mut all: Vec<String> = self
                .labels
                .iter()
                .chain(self.colors.iter())
                .cloned()
                .collect();
            all.sort();
            all.dedup();
            all.len()
        };
        Ok(ModelConfig {
            d_obj: self.object_token_width(),
            d_text: self.d_text,
            d_base: 32,
            d_phase: 32,
            extractor_depth: 4,
            phase_depth: 2,
            answer_vocab_size: vocab,
            attn_dim: 16,
            answer_hidden: 48,
            mask_mode: MaskMode::Soft,
        })
    }
}
