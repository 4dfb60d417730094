//! The grounded-QA model: per-object feature extractor, three-phase
//! mask predictor, mask-reweighted answer head, and FLOPs accounting.
//!
//! Data flow per question:
//!
//! ```text
//! tokens (n×d_obj) ── 4-layer MLP ──► F_base (n×d_base)
//! F_base ──────────────► phase cg ──► F_cg, M̂_cg
//! concat(F_base, F_cg) ► phase fg ──► F_fg, M̂_fg
//! concat(F_base, F_fg) ► phase if ──► F_if, M̂_if
//! tokens · (M̂_if + 1) ─► answer head + text ──► vocab logits
//! ```
//!
//! The phases are strictly sequential: each consumes only `F_base` and
//! the previous phase's feature, so ablating a later phase cannot change
//! an earlier mask. All per-object computation is row-wise, making every
//! output permutation-equivariant in the object order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Gradients, Tape, Tensor, Var};

/// How the inference-phase mask enters the answer head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Reweight by the predicted probability; differentiable end to end.
    #[default]
    Soft,
    /// Binarize at a threshold first. The thresholded mask is a constant
    /// in the graph, so no gradient flows through it; intended for
    /// inference-time ablations.
    Hard { threshold: f64 },
}

fn default_extractor_depth() -> usize {
    4
}

fn default_phase_depth() -> usize {
    2
}

fn default_attn_dim() -> usize {
    32
}

fn default_answer_hidden() -> usize {
    64
}

/// Widths and depths of every component. Serializable so a run's config
/// can be stored alongside its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Object-token width.
    pub d_obj: usize,
    /// Text-token width.
    pub d_text: usize,
    /// Base-feature width out of the extractor.
    pub d_base: usize,
    /// Phase-feature width inside the mask stack.
    pub d_phase: usize,
    /// Extractor layer count; relu between layers, linear last.
    #[serde(default = "default_extractor_depth")]
    pub extractor_depth: usize,
    /// Trunk depth of each mask phase.
    #[serde(default = "default_phase_depth")]
    pub phase_depth: usize,
    /// Answer vocabulary size.
    pub answer_vocab_size: usize,
    /// Attention projection width in the answer head.
    #[serde(default = "default_attn_dim")]
    pub attn_dim: usize,
    /// Hidden width of the answer classifier.
    #[serde(default = "default_answer_hidden")]
    pub answer_hidden: usize,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_obj: 32,
            d_text: 64,
            d_base: 32,
            d_phase: 32,
            extractor_depth: default_extractor_depth(),
            phase_depth: default_phase_depth(),
            answer_vocab_size: 16,
            attn_dim: default_attn_dim(),
            answer_hidden: default_answer_hidden(),
            mask_mode: MaskMode::Soft,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_obj", self.d_obj),
            ("d_text", self.d_text),
            ("d_base", self.d_base),
            ("d_phase", self.d_phase),
            ("extractor_depth", self.extractor_depth),
            ("phase_depth", self.phase_depth),
            ("attn_dim", self.attn_dim),
            ("answer_hidden", self.answer_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::validation("model config", name, "must be ≥ 1"));
            }
        }
        if self.answer_vocab_size < 2 {
            return Err(Error::validation(
                "model config",
                "answer_vocab_size",
                "need at least two answers to classify",
            ));
        }
        if let MaskMode::Hard { threshold } = self.mask_mode {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::validation(
                    "model config",
                    "mask_mode.threshold",
                    format!("must lie in (0,1), got {threshold}"),
                ));
            }
        }
        Ok(())
    }

    /// Phase trunk input width: the first phase sees `F_base` alone, the
    /// later two see it concatenated with the previous phase feature.
    fn phase_input_width(&self, phase: Phase) -> usize {
        match phase {
            Phase::Cg => self.d_base,
            Phase::Fg | Phase::If => self.d_base + self.d_phase,
        }
    }

    /// Width of the answer classifier's input: attended tokens ⊕
    /// mean-pooled tokens ⊕ pooled text.
    fn answer_input_width(&self) -> usize {
        2 * self.d_obj + self.d_text
    }
}

/// The three mask phases, coarse to target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cg,
    Fg,
    If,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Cg, Phase::Fg, Phase::If];

    pub fn key(self) -> &'static str {
        match self {
            Phase::Cg => "cg",
            Phase::Fg => "fg",
            Phase::If => "if",
        }
    }
}

/// Named parameters plus the config that shapes them.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

/// (name, rows, cols) for every weight matrix; biases are the cols-wide
/// zero vectors alongside.
fn layer_plan(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let mut plan = Vec::new();
    for i in 0..cfg.extractor_depth {
        let input = if i == 0 { cfg.d_obj } else { cfg.d_base };
        plan.push((format!("extract.w{i}"), input, cfg.d_base));
    }
    for phase in Phase::ALL {
        let key = phase.key();
        for i in 0..cfg.phase_depth {
            let input = if i == 0 {
                cfg.phase_input_width(phase)
            } else {
                cfg.d_phase
            };
            plan.push((format!("hsm.{key}.w{i}"), input, cfg.d_phase));
        }
        plan.push((format!("hsm.{key}.mask_w"), cfg.d_phase, 1));
    }
    plan.push(("ans.wq".to_string(), cfg.d_text, cfg.attn_dim));
    plan.push(("ans.wk".to_string(), cfg.d_obj, cfg.attn_dim));
    plan.push((
        "ans.w0".to_string(),
        cfg.answer_input_width(),
        cfg.answer_hidden,
    ));
    plan.push((
        "ans.w1".to_string(),
        cfg.answer_hidden,
        cfg.answer_vocab_size,
    ));
    plan
}

fn bias_name(weight_name: &str) -> String {
    if let Some(stem) = weight_name.strip_suffix("mask_w") {
        return format!("{stem}mask_b");
    }
    match weight_name.rfind(".w") {
        Some(pos) => format!("{}.b{}", &weight_name[..pos], &weight_name[pos + 2..]),
        None => format!("{weight_name}.bias"),
    }
}

impl ModelState {
    /// Fresh parameters: weights ~ N(0, 2/fan_in), biases zero, sampled
    /// in a fixed order so a seed pins every value.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, rows, cols) in layer_plan(&config) {
            let std = (2.0 / rows as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            params.insert(bias_name(&name), Tensor::zeros(&[cols]));
            params.insert(name, Tensor::matrix(rows, cols, data)?);
        }
        Ok(ModelState { config, params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
    }

    /// Rebuilds a state from checkpoint parameters, insisting that every
    /// expected parameter is present with the config's shape.
    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        let reference = ModelState::init(config.clone(), 0)?;
        for (name, t) in &reference.params {
            match ckpt.params.get(name) {
                None => {
                    return Err(Error::validation(
                        "checkpoint",
                        name.clone(),
                        "parameter missing",
                    ))
                }
                Some(got) if got.shape() != t.shape() => {
                    return Err(Error::validation(
                        "checkpoint",
                        name.clone(),
                        format!(
                            "shape {:?} does not match config's {:?}",
                            got.shape(),
                            t.shape()
                        ),
                    ))
                }
                Some(_) => {}
            }
        }
        for name in ckpt.params.keys() {
            if !reference.params.contains_key(name) {
                return Err(Error::validation(
                    "checkpoint",
                    name.clone(),
                    "parameter not in this architecture",
                ));
            }
        }
        Ok(ModelState {
            config,
            params: ckpt.params.clone(),
        })
    }

    /// Puts every parameter on the tape as a gradient-tracked leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> BoundModel<'a> {
        self.bind_inner(tape, true)
    }

    /// Puts every parameter on the tape as a constant; forward passes
    /// work but no parameter gradients accumulate. For evaluation.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape) -> BoundModel<'a> {
        self.bind_inner(tape, false)
    }

    fn bind_inner<'a>(&'a self, tape: &mut Tape, trainable: bool) -> BoundModel<'a> {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundModel { state: self, vars }
    }
}

/// One model's parameters materialized on a tape.
pub struct BoundModel<'a> {
    state: &'a ModelState,
    vars: BTreeMap<String, Var>,
}

/// Per-phase features and mask probabilities, as tape variables.
pub struct HsmOutput {
    pub f_cg: Var,
    pub f_fg: Var,
    pub f_if: Var,
    pub m_cg: Var,
    pub m_fg: Var,
    pub m_if: Var,
}

impl HsmOutput {
    pub fn mask(&self, phase: Phase) -> Var {
        match phase {
            Phase::Cg => self.m_cg,
            Phase::Fg => self.m_fg,
            Phase::If => self.m_if,
        }
    }
}

/// Everything a full forward pass produces.
pub struct ForwardPass {
    pub f_base: Var,
    pub hsm: HsmOutput,
    /// The (mask + 1) row weights actually applied to the tokens.
    pub reweighted_tokens: Var,
    /// Answer logits, length `answer_vocab_size`.
    pub logits: Var,
}

impl<'a> BoundModel<'a> {
    pub fn config(&self) -> &ModelConfig {
        &self.state.config
    }

    fn p(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    fn mlp(&self, tape: &mut Tape, mut x: Var, prefix: &str, depth: usize) -> Result<Var> {
        for i in 0..depth {
            x = tape.matmul(x, self.p(&format!("{prefix}.w{i}")))?;
            x = tape.add(x, self.p(&format!("{prefix}.b{i}")))?;
            if i + 1 < depth {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Object tokens → base features via the per-object extractor MLP.
    pub fn pre_hsm_extract(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let shape = tape.value(tokens).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config().d_obj {
            return Err(Error::ShapeMismatch {
                op: "pre_hsm_extract",
                lhs: shape,
                rhs: vec![self.config().d_obj],
            });
        }
        self.mlp(tape, tokens, "extract", self.config().extractor_depth)
    }

    fn mask_head(&self, tape: &mut Tape, feature: Var, phase: Phase) -> Result<Var> {
        let key = phase.key();
        let z = tape.matmul(feature, self.p(&format!("hsm.{key}.mask_w")))?;
        let z = tape.add(z, self.p(&format!("hsm.{key}.mask_b")))?;
        let n = tape.value(z).shape()[0];
        let z = tape.reshape(z, vec![n])?;
        Ok(tape.sigmoid(z))
    }

    /// The sequential three-phase pass: each phase reads `F_base`
    /// concatenated with its predecessor's feature, never anything later.
    pub fn hsm_forward(&self, tape: &mut Tape, f_base: Var) -> Result<HsmOutput> {
        let shape = tape.value(f_base).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config().d_base {
            return Err(Error::ShapeMismatch {
                op: "hsm_forward",
                lhs: shape,
                rhs: vec![self.config().d_base],
            });
        }
        let depth = self.config().phase_depth;
        let f_cg = self.mlp(tape, f_base, "hsm.cg", depth)?;
        let m_cg = self.mask_head(tape, f_cg, Phase::Cg)?;

        let in_fg = tape.concat(f_base, f_cg)?;
        let f_fg = self.mlp(tape, in_fg, "hsm.fg", depth)?;
        let m_fg = self.mask_head(tape, f_fg, Phase::Fg)?;

        let in_if = tape.concat(f_base, f_fg)?;
        let f_if = self.mlp(tape, in_if, "hsm.if", depth)?;
        let m_if = self.mask_head(tape, f_if, Phase::If)?;

        Ok(HsmOutput {
            f_cg,
            f_fg,
            f_if,
            m_cg,
            m_fg,
            m_if,
        })
    }

    /// Single-query attention over the reweighted tokens plus mean
    /// pooling, classified into vocabulary logits.
    pub fn answer_head(&self, tape: &mut Tape, tokens: Var, text: Var) -> Result<Var> {
        let cfg = self.config();
        let tok_shape = tape.value(tokens).shape().to_vec();
        let text_shape = tape.value(text).shape().to_vec();
        if tok_shape.len() != 2 || tok_shape[1] != cfg.d_obj {
            return Err(Error::ShapeMismatch {
                op: "answer_head",
                lhs: tok_shape,
                rhs: vec![cfg.d_obj],
            });
        }
        if text_shape.len() != 2 || text_shape[1] != cfg.d_text {
            return Err(Error::ShapeMismatch {
                op: "answer_head",
                lhs: text_shape,
                rhs: vec![cfg.d_text],
            });
        }
        let (n, t) = (tok_shape[0], text_shape[0]);

        let mean_t = tape.constant(Tensor::matrix(1, t, vec![1.0 / t as f64; t])?);
        let text_pooled = tape.matmul(mean_t, text)?;

        let q = tape.matmul(text_pooled, self.p("ans.wq"))?;
        let keys = tape.matmul(tokens, self.p("ans.wk"))?;
        let q_col = tape.reshape(q, vec![cfg.attn_dim, 1])?;
        let scores = tape.matmul(keys, q_col)?;
        let scores = tape.reshape(scores, vec![n])?;
        let scores = tape.mul_scalar(scores, 1.0 / (cfg.attn_dim as f64).sqrt());
        let weights = tape.softmax(scores);
        let weights_row = tape.reshape(weights, vec![1, n])?;
        let attended = tape.matmul(weights_row, tokens)?;

        let mean_n = tape.constant(Tensor::matrix(1, n, vec![1.0 / n as f64; n])?);
        let pooled_tokens = tape.matmul(mean_n, tokens)?;

        let feat = tape.concat(attended, pooled_tokens)?;
        let feat = tape.concat(feat, text_pooled)?;
        let logits = self.mlp(tape, feat, "ans", 2)?;
        let v = cfg.answer_vocab_size;
        tape.reshape(logits, vec![v])
    }

    /// Full pass from raw tokens and text to logits.
    pub fn forward(&self, tape: &mut Tape, tokens: &Tensor, text: &Tensor) -> Result<ForwardPass> {
        let tok = tape.constant(tokens.clone());
        let f_base = self.pre_hsm_extract(tape, tok)?;
        let hsm = self.hsm_forward(tape, f_base)?;
        let mask = match self.config().mask_mode {
            MaskMode::Soft => hsm.m_if,
            MaskMode::Hard { threshold } => {
                let binary: Vec<f64> = tape
                    .value(hsm.m_if)
                    .data()
                    .iter()
                    .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
                    .collect();
                tape.constant(Tensor::vector(&binary))
            }
        };
        let reweighted = reweight_tokens(tape, tok, mask)?;
        let text_var = tape.constant(text.clone());
        let logits = self.answer_head(tape, reweighted, text_var)?;
        Ok(ForwardPass {
            f_base,
            hsm,
            reweighted_tokens: reweighted,
            logits,
        })
    }

    /// Collects named parameter gradients after a backward pass; absent
    /// gradients come back as zeros so optimizers see a full map.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.state.params[name].shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// o_i' = (m_i + 1) · o_i. The +1 keeps unselected objects visible to
/// the answer head, so an all-zero mask is exactly a no-op.
pub fn reweight_tokens(tape: &mut Tape, tokens: Var, mask: Var) -> Result<Var> {
    let shifted = tape.add_scalar(mask, 1.0);
    tape.scale_rows(tokens, shifted)
}

/// Multiply-add count of one dense layer: 2 · in · out · rows.
pub fn linear_flops(input: usize, output: usize, rows: usize) -> u64 {
    2 * input as u64 * output as u64 * rows as u64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub flops: u64,
}

/// Per-layer and per-component FLOPs for one forward pass, with the
/// mask stack's share of a caller-supplied backbone budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlopsReport {
    pub n_objects: usize,
    pub t_text: usize,
    pub layers: Vec<LayerFlops>,
    pub extractor_total: u64,
    pub hsm_total: u64,
    pub answer_total: u64,
    pub model_total: u64,
    /// None means no budget given (treated as unbounded).
    pub backbone_budget: Option<f64>,
    /// hsm_total / backbone_budget; 0 when unbounded.
    pub hsm_to_backbone_ratio: f64,
}

/// Counts only dense multiplications (the closed form above); pooling
/// and softmax are negligible next to them and are not counted.
pub fn count_flops(
    cfg: &ModelConfig,
    n_objects: usize,
    t_text: usize,
    backbone_budget: Option<f64>,
) -> Result<FlopsReport> {
    cfg.validate()?;
    if n_objects == 0 || t_text == 0 {
        return Err(Error::validation(
            "flops",
            "n_objects/t_text",
            "need at least one object and one text token",
        ));
    }
    if let Some(b) = backbone_budget {
        if b.is_nan() || b <= 0.0 {
            return Err(Error::Config(format!(
                "backbone budget must be positive, got {b}"
            )));
        }
    }
    let mut layers = Vec::new();
    let push = |layers: &mut Vec<LayerFlops>, name: String, input, output, rows| -> u64 {
        let flops = linear_flops(input, output, rows);
        layers.push(LayerFlops { name, flops });
        flops
    };

    let mut extractor_total = 0;
    for i in 0..cfg.extractor_depth {
        let input = if i == 0 { cfg.d_obj } else { cfg.d_base };
        extractor_total += push(
            &mut layers,
            format!("extract.w{i}"),
            input,
            cfg.d_base,
            n_objects,
        );
    }

    let mut hsm_total = 0;
    for phase in Phase::ALL {
        let key = phase.key();
        for i in 0..cfg.phase_depth {
            let input = if i == 0 {
                cfg.phase_input_width(phase)
            } else {
                cfg.d_phase
            };
            hsm_total += push(
                &mut layers,
                format!("hsm.{key}.w{i}"),
                input,
                cfg.d_phase,
                n_objects,
            );
        }
        hsm_total += push(
            &mut layers,
            format!("hsm.{key}.mask_w"),
            cfg.d_phase,
            1,
            n_objects,
        );
    }

    let mut answer_total = 0;
    answer_total += push(&mut layers, "ans.wq".into(), cfg.d_text, cfg.attn_dim, 1);
    answer_total += push(
        &mut layers,
        "ans.wk".into(),
        cfg.d_obj,
        cfg.attn_dim,
        n_objects,
    );
    answer_total += push(&mut layers, "ans.scores".into(), cfg.attn_dim, 1, n_objects);
    answer_total += push(&mut layers, "ans.attend".into(), n_objects, cfg.d_obj, 1);
    answer_total += push(
        &mut layers,
        "ans.w0".into(),
        cfg.answer_input_width(),
        cfg.answer_hidden,
        1,
    );
    answer_total += push(
        &mut layers,
        "ans.w1".into(),
        cfg.answer_hidden,
        cfg.answer_vocab_size,
        1,
    );

    let model_total = extractor_total + hsm_total + answer_total;
    let ratio = match backbone_budget {
        Some(b) => hsm_total as f64 / b,
        None => 0.0,
    };
    Ok(FlopsReport {
        n_objects,
        t_text,
        layers,
        extractor_total,
        hsm_total,
        answer_total,
        model_total,
        backbone_budget,
        hsm_to_backbone_ratio: ratio,
    })
}
