//! Loss assembly and the deterministic training loop.
//!
//! The mask losses for the three narrowing phases are combined as
//! `λ_cg·L_cg + λ_fg·L_fg + λ_if·L_if` (defaults 0.2/0.3/0.5) and added
//! to the answer cross-entropy scaled by `λ_ans`. Supervision flags gate
//! each phase: a disabled phase contributes no loss node at all, so its
//! mask head provably receives zero gradient (its trunk still learns
//! through the next phase's input, which is the point of the sequential
//! design).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fnv::{derive_seed, fnv1a};
use crate::labelgen::{generate_labels, LabelGenConfig, MaskTriple};
use crate::model::{HsmOutput, ModelConfig, ModelState};
use crate::scene::AnswerVocab;
use crate::synth::{Featurizer, SyntheticDataset};
use crate::tensor::{Checkpoint, Optimizer, OptimizerState, Tape, Tensor, Var};

/// Per-phase loss weights plus the answer-loss weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cg: f64,
    pub fg: f64,
    #[serde(rename = "if")]
    pub if_: f64,
    pub ans: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cg: 0.2,
            fg: 0.3,
            if_: 0.5,
            ans: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ctx = "loss weights";
        for (name, w) in [
            ("cg", self.cg),
            ("fg", self.fg),
            ("if", self.if_),
            ("ans", self.ans),
        ] {
            if w.is_nan() || !w.is_finite() || w < 0.0 {
                return Err(Error::validation(ctx, name, "must be finite and ≥ 0"));
            }
        }
        if self.cg == 0.0 && self.fg == 0.0 && self.if_ == 0.0 && self.ans == 0.0 {
            return Err(Error::validation(ctx, "*", "all weights are zero"));
        }
        Ok(())
    }
}

/// Which supervision signals are active. Answer supervision is always
/// on; the three mask phases toggle for the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionFlags {
    pub cg: bool,
    pub fg: bool,
    #[serde(rename = "if")]
    pub if_: bool,
    pub vqa: bool,
}

impl Default for SupervisionFlags {
    fn default() -> Self {
        SupervisionFlags::full()
    }
}

impl SupervisionFlags {
    pub fn full() -> Self {
        SupervisionFlags {
            cg: true,
            fg: true,
            if_: true,
            vqa: true,
        }
    }

    /// Answer loss only — the baseline every ablation row compares against.
    pub fn answer_only() -> Self {
        SupervisionFlags {
            cg: false,
            fg: false,
            if_: false,
            vqa: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.vqa {
            return Err(Error::validation(
                "supervision flags",
                "vqa",
                "answer supervision cannot be disabled",
            ));
        }
        Ok(())
    }

    /// Short id for file names and report rows, e.g. "cg+fg+if+vqa".
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.cg {
            parts.push("cg");
        }
        if self.fg {
            parts.push("fg");
        }
        if self.if_ {
            parts.push("if");
        }
        parts.push("vqa");
        parts.join("+")
    }
}

/// Everything `fit` needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub supervision: SupervisionFlags,
    #[serde(default)]
    pub labels: LabelGenConfig,
    /// Stop once validation EM@1 reaches this value, keeping the run
    /// deterministic (the stop depends only on seeded quantities).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_val_em1: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ctx = "train config";
        self.model.validate()?;
        self.loss_weights.validate()?;
        self.supervision.validate()?;
        self.labels.validate()?;
        if self.epochs == 0 {
            return Err(Error::validation(ctx, "epochs", "must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation(ctx, "batch_size", "must be ≥ 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::validation(
                ctx,
                "learning_rate",
                "must be finite and ≥ 0",
            ));
        }
        if let Some(t) = self.target_val_em1 {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::validation(
                    ctx,
                    "target_val_em1",
                    "must lie in [0,1]",
                ));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's canonical JSON form; ties checkpoints and
/// run manifests to the exact configuration that produced them.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let body = serde_json::to_string(value)
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    let digest = Sha256::digest(body.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Weighted combination of already-evaluated phase losses. Disabled
/// phases contribute exactly 0 regardless of their weight.
pub fn combine_hsm(
    l_cg: f64,
    l_fg: f64,
    l_if: f64,
    w: &LossWeights,
    flags: &SupervisionFlags,
) -> f64 {
    let mut total = 0.0;
    if flags.cg {
        total += w.cg * l_cg;
    }
    if flags.fg {
        total += w.fg * l_fg;
    }
    if flags.if_ {
        total += w.if_ * l_if;
    }
    total
}

/// On-tape mask losses. Each enabled phase gets a class-weighted BCE
/// node (falling back to the unweighted mean when a scene has only one
/// class); `total` is their weighted sum, `None` when every phase is off.
pub struct HsmLoss {
    pub total: Option<Var>,
    pub cg: Option<Var>,
    pub fg: Option<Var>,
    pub if_: Option<Var>,
}

pub fn hsm_loss(
    tape: &mut Tape,
    preds: &HsmOutput,
    labels: &MaskTriple,
    w: &LossWeights,
    flags: &SupervisionFlags,
) -> Result<HsmLoss> {
    labels.validate()?;
    let n = labels.boi.len();
    for (name, var) in [("cg", preds.m_cg), ("fg", preds.m_fg), ("if", preds.m_if)] {
        let got = tape.value(var).numel();
        if got != n {
            return Err(Error::validation(
                "hsm_loss",
                name,
                format!("{got} mask predictions for {n} labeled objects"),
            ));
        }
    }
    let mut total: Option<Var> = None;
    let mut phase = |tape: &mut Tape,
                     on: bool,
                     pred: Var,
                     labels: &[bool],
                     weight: f64|
     -> Result<Option<Var>> {
        if !on {
            return Ok(None);
        }
        let raw = tape.bce_auto(pred, labels)?;
        let scaled = tape.mul_scalar(raw, weight);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
        Ok(Some(raw))
    };
    let cg = phase(tape, flags.cg, preds.m_cg, &labels.boi, w.cg)?;
    let fg = phase(tape, flags.fg, preds.m_fg, &labels.ooi, w.fg)?;
    let if_ = phase(tape, flags.if_, preds.m_if, &labels.oot, w.if_)?;
    Ok(HsmLoss { total, cg, fg, if_ })
}

/// Final training objective: mask losses plus `λ_ans` times the answer
/// cross-entropy.
pub fn total_loss(tape: &mut Tape, hsm: Option<Var>, ans: Var, w: &LossWeights) -> Result<Var> {
    let ans_term = tape.mul_scalar(ans, w.ans);
    match hsm {
        Some(h) => tape.add(h, ans_term),
        None => Ok(ans_term),
    }
}

/// One fully-prepared training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub question_id: String,
    pub tokens: Tensor,
    pub text: Tensor,
    pub masks: MaskTriple,
    pub answer_index: usize,
    pub answer: String,
}

/// Featurized dataset plus the answer vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub samples: Vec<TrainSample>,
    pub vocab: AnswerVocab,
}

/// Deterministic 10% validation membership by question-id hash.
pub fn is_validation(question_id: &str) -> bool {
    fnv1a(question_id.as_bytes()).is_multiple_of(10)
}

impl TrainData {
    /// Featurizes every question and derives its nested mask labels.
    pub fn from_dataset(ds: &SyntheticDataset, labels: &LabelGenConfig) -> Result<TrainData> {
        let featurizer = Featurizer::new(&ds.spec)?;
        let vocab = ds.spec.answer_vocab()?;
        let by_id: BTreeMap<&str, usize> = ds
            .scenes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.scene_id.as_str(), i))
            .collect();
        let mut samples = Vec::with_capacity(ds.questions.len());
        for q in &ds.questions {
            let scene = &ds.scenes[*by_id.get(q.scene_id.as_str()).ok_or_else(|| {
                Error::validation(
                    format!("question {}", q.question_id),
                    "scene_id",
                    format!("unknown scene {}", q.scene_id),
                )
            })?];
            let (tokens, text) = featurizer.featurize(scene, q)?;
            let masks = generate_labels(scene, q, labels)?;
            let answer = q.answers.first().cloned().ok_or_else(|| {
                Error::validation(format!("question {}", q.question_id), "answers", "empty")
            })?;
            let answer_index = vocab.index_of(&answer).ok_or_else(|| {
                Error::Config(format!(
                    "answer {answer:?} of question {} is outside the vocabulary",
                    q.question_id
                ))
            })?;
            samples.push(TrainSample {
                question_id: q.question_id.clone(),
                tokens,
                text,
                masks,
                answer_index,
                answer,
            });
        }
        Ok(TrainData { samples, vocab })
    }

    /// Indices of the training and validation subsets. An empty
    /// validation split (tiny corpora) falls back to validating on the
    /// training set so the loop always has a metric.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if is_validation(&s.question_id) {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        if train.is_empty() {
            train = val.clone();
        }
        if val.is_empty() {
            val = train.clone();
        }
        (train, val)
    }
}

/// One JSONL record per epoch; field names are the on-disk log schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cg: f64,
    pub loss_fg: f64,
    pub loss_if: f64,
    pub loss_ans: f64,
    pub val_em1: f64,
}

/// Output of [`fit`]: the final parameters, the per-epoch log, and the
/// best-validation checkpoint observed along the way.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ModelState,
    pub log: Vec<EpochLog>,
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_em1: f64,
}

pub fn write_log(log: &[EpochLog], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    for entry in log {
        body.push_str(&serde_json::to_string(entry).expect("log serialization cannot fail"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

fn accumulate(acc: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match acc.get_mut(name) {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                acc.insert(name.clone(), g.clone());
            }
        }
    }
}

/// Greedy top-1 answer index: highest logit, ties to the lower index.
pub fn top1(logits: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > logits.data()[best] {
            best = i;
        }
    }
    best
}

fn exact_match_rate(state: &ModelState, data: &TrainData, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for &i in indices {
        let s = &data.samples[i];
        let mut tape = Tape::new();
        let bound = state.bind_frozen(&mut tape);
        let fp = bound.forward(&mut tape, &s.tokens, &s.text)?;
        let idx = top1(tape.value(fp.logits));
        let predicted = data.vocab.answer(idx).ok_or_else(|| {
            Error::Config(format!("predicted index {idx} is outside the vocabulary"))
        })?;
        if predicted == s.answer {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len() as f64)
}

/// Minibatch training on the total loss. Deterministic given the seed:
/// initialization, shuffling, and featurization all derive from it.
/// Checkpoints the best-validation-EM@1 parameters; aborts with a
/// diagnostic if any sample's loss stops being finite.
pub fn fit(cfg: &TrainConfig, data: &TrainData) -> Result<FitResult> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(Error::validation("fit", "data", "no training samples"));
    }
    if data.vocab.len() != cfg.model.answer_vocab_size {
        return Err(Error::validation(
            "fit",
            "model.answer_vocab_size",
            format!(
                "model emits {} logits but the vocabulary has {} answers",
                cfg.model.answer_vocab_size,
                data.vocab.len()
            ),
        ));
    }
    let (train_idx, val_idx) = data.split();

    let mut state = ModelState::init(cfg.model.clone(), cfg.seed)?;
    let mut opt = OptimizerState::with_mode(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch-shuffle"));
    let mut order = train_idx.clone();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Checkpoint, usize, f64)> = None;
    let hash = config_hash(cfg)?;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5]; // total, cg, fg, if, ans
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let s = &data.samples[i];
                let mut tape = Tape::new();
                let bound = state.bind(&mut tape);
                let fp = bound.forward(&mut tape, &s.tokens, &s.text)?;
                let hsm = hsm_loss(
                    &mut tape,
                    &fp.hsm,
                    &s.masks,
                    &cfg.loss_weights,
                    &cfg.supervision,
                )?;
                let ans = tape.cross_entropy(fp.logits, s.answer_index)?;
                let loss = total_loss(&mut tape, hsm.total, ans, &cfg.loss_weights)?;

                let loss_value = tape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        sample: i,
                        loss: loss_value,
                    });
                }
                sums[0] += loss_value;
                let part = |v: Option<Var>| v.map(|v| tape.value(v).item()).unwrap_or(0.0);
                sums[1] += part(hsm.cg);
                sums[2] += part(hsm.fg);
                sums[3] += part(hsm.if_);
                sums[4] += tape.value(ans).item();

                let grads = tape.backward(loss)?;
                accumulate(&mut grad_acc, &bound.gradients(&grads));
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad_acc.values_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            opt.step(&mut state.params, &grad_acc)?;
        }

        let n = order.len() as f64;
        let val_em1 = exact_match_rate(&state, data, &val_idx)?;
        log.push(EpochLog {
            epoch,
            loss_total: sums[0] / n,
            loss_cg: sums[1] / n,
            loss_fg: sums[2] / n,
            loss_if: sums[3] / n,
            loss_ans: sums[4] / n,
            val_em1,
        });

        let improved = match &best {
            Some((_, _, best_em)) => val_em1 > *best_em,
            None => true,
        };
        if improved {
            let mut ckpt = state.to_checkpoint();
            ckpt.config_hash = hash.clone();
            ckpt.seed = cfg.seed;
            ckpt.epoch = epoch;
            ckpt.val_em1 = Some(val_em1);
            best = Some((ckpt, epoch, val_em1));
        }
        if cfg.target_val_em1.is_some_and(|t| val_em1 >= t) {
            break;
        }
    }

    let (best, best_epoch, best_val_em1) = best.expect("epochs ≥ 1 guarantees one entry");
    Ok(FitResult {
        state,
        log,
        best,
        best_epoch,
        best_val_em1,
    })
}
