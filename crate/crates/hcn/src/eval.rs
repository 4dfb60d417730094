//! Answer metrics, the mask-vs-object-id improvement ratio, the
//! synonym-substitution shortcut probe, and the supervision ablation
//! runner.
//!
//! All string comparison happens after canonicalization (lowercase,
//! punctuation stripped, whitespace collapsed); ranking ties break
//! toward the lower vocabulary index so every metric is deterministic.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnv::derive_seed;
use crate::labelgen::tokenize_lower;
use crate::model::ModelState;
use crate::scene::{AnswerVocab, QuestionRecord};
use crate::synth::{default_lexicon, SyntheticDataset};
use crate::tensor::{Tape, Tensor};
use crate::train::{fit, FitResult, SupervisionFlags, TrainConfig, TrainData};

/// ROUGE-L recall/precision balance; recall-weighted as in the classic
/// summarization setting.
pub const ROUGE_BETA: f64 = 1.2;

/// Lowercases, strips punctuation, collapses whitespace.
pub fn canonicalize(s: &str) -> String {
    tokenize_lower(s).join(" ")
}

/// Vocabulary answers ordered by descending logit; equal logits rank by
/// vocabulary index.
pub fn rank_answers(logits: &Tensor, vocab: &AnswerVocab) -> Result<Vec<String>> {
    if logits.numel() != vocab.len() {
        return Err(Error::validation(
            "rank_answers",
            "logits",
            format!("{} logits for {} answers", logits.numel(), vocab.len()),
        ));
    }
    let mut idx: Vec<usize> = (0..vocab.len()).collect();
    idx.sort_by(|&a, &b| {
        logits.data()[b]
            .partial_cmp(&logits.data()[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.into_iter()
        .map(|i| {
            vocab
                .answer(i)
                .map(str::to_string)
                .ok_or_else(|| Error::Config(format!("vocab index {i} out of range")))
        })
        .collect()
}

/// 1 iff any gold answer appears among the top-k ranked answers after
/// canonicalization.
pub fn em_at_k(ranked: &[String], gold: &[String], k: usize) -> Result<bool> {
    if k == 0 {
        return Err(Error::validation("em_at_k", "k", "must be ≥ 1"));
    }
    let gold: Vec<String> = gold.iter().map(|g| canonicalize(g)).collect();
    Ok(ranked
        .iter()
        .take(k)
        .any(|r| gold.iter().any(|g| *g == canonicalize(r))))
}

/// Score plus a marker for the degenerate empty-candidate case, which
/// is defined as 0 rather than an error so corpus loops keep going.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramScore {
    pub score: f64,
    pub empty_candidate: bool,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-n with uniform weights 1/n over orders 1..=n, clipped modified
/// precision, and the closest-reference-length brevity penalty (ties go
/// to the shorter reference). No smoothing: a zero precision at any
/// order zeroes the score.
pub fn bleu_n(candidate: &str, references: &[String], n: usize) -> Result<NgramScore> {
    if !(1..=4).contains(&n) {
        return Err(Error::validation("bleu_n", "n", "order must lie in 1..=4"));
    }
    if references.is_empty() {
        return Err(Error::validation(
            "bleu_n",
            "references",
            "need at least one",
        ));
    }
    let cand = tokenize_lower(candidate);
    if cand.is_empty() {
        return Ok(NgramScore {
            score: 0.0,
            empty_candidate: true,
        });
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize_lower(r)).collect();

    let c = cand.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };

    let mut log_precision_sum = 0.0;
    for order in 1..=n {
        let cand_counts = ngram_counts(&cand, order);
        let total: usize = cand_counts.values().sum();
        if total == 0 {
            return Ok(NgramScore {
                score: 0.0,
                empty_candidate: false,
            });
        }
        let mut clipped = 0usize;
        for (gram, &count) in &cand_counts {
            let max_ref = refs
                .iter()
                .map(|r| ngram_counts(r, order).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        if clipped == 0 {
            return Ok(NgramScore {
                score: 0.0,
                empty_candidate: false,
            });
        }
        log_precision_sum += (clipped as f64 / total as f64).ln();
    }
    Ok(NgramScore {
        score: bp * (log_precision_sum / n as f64).exp(),
        empty_candidate: false,
    })
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with β = [`ROUGE_BETA`], maximized over references.
pub fn rouge_l(candidate: &str, references: &[String]) -> Result<NgramScore> {
    if references.is_empty() {
        return Err(Error::validation(
            "rouge_l",
            "references",
            "need at least one",
        ));
    }
    let cand = tokenize_lower(candidate);
    if cand.is_empty() {
        return Ok(NgramScore {
            score: 0.0,
            empty_candidate: true,
        });
    }
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let mut best = 0.0f64;
    for r in references {
        let r = tokenize_lower(r);
        if r.is_empty() {
            continue;
        }
        let lcs = lcs_len(&cand, &r) as f64;
        let recall = lcs / r.len() as f64;
        let precision = lcs / cand.len() as f64;
        let denom = recall + beta2 * precision;
        if denom > 0.0 {
            best = best.max((1.0 + beta2) * recall * precision / denom);
        }
    }
    Ok(NgramScore {
        score: best,
        empty_candidate: false,
    })
}

/// γ = (score_mask − score_none) / (score_objectids − score_none): how
/// much of the headroom unlocked by ground-truth object ids the mask
/// annotations recover.
pub fn improvement_ratio(score_none: f64, score_objectids: f64, score_mask: f64) -> Result<f64> {
    let denom = score_objectids - score_none;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator { score: score_none });
    }
    Ok((score_mask - score_none) / denom)
}

/// Corpus-level answer metrics. Fractions in [0,1]; display layers
/// multiply by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub em1: f64,
    pub em10: f64,
    /// BLEU-n for n ∈ 1..=4.
    pub bleu: BTreeMap<usize, f64>,
    pub rouge_l: f64,
    pub questions: usize,
    pub empty_candidates: usize,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let mut scores = vec![
            ("em1", self.em1),
            ("em10", self.em10),
            ("rouge_l", self.rouge_l),
        ];
        for (n, s) in &self.bleu {
            scores.push(match n {
                1 => ("bleu1", *s),
                2 => ("bleu2", *s),
                3 => ("bleu3", *s),
                _ => ("bleu4", *s),
            });
        }
        for (name, s) in scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::validation(
                    "metrics report",
                    name,
                    format!("{s} outside [0,1]"),
                ));
            }
        }
        Ok(())
    }
}

/// Runs the model over the indexed samples and aggregates every metric.
/// The top-1 answer serves as the n-gram candidate against the gold
/// answer strings.
pub fn evaluate(state: &ModelState, data: &TrainData, indices: &[usize]) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::validation(
            "evaluate",
            "indices",
            "nothing to evaluate",
        ));
    }
    let mut em1_hits = 0usize;
    let mut em10_hits = 0usize;
    let mut bleu_sums = BTreeMap::from([(1, 0.0), (2, 0.0), (3, 0.0), (4, 0.0)]);
    let mut rouge_sum = 0.0;
    let mut empty = 0usize;
    for &i in indices {
        let s = &data.samples[i];
        let mut tape = Tape::new();
        let bound = state.bind_frozen(&mut tape);
        let fp = bound.forward(&mut tape, &s.tokens, &s.text)?;
        let ranked = rank_answers(tape.value(fp.logits), &data.vocab)?;
        let gold = std::slice::from_ref(&s.answer);
        if em_at_k(&ranked, gold, 1)? {
            em1_hits += 1;
        }
        if em_at_k(&ranked, gold, 10)? {
            em10_hits += 1;
        }
        let candidate = &ranked[0];
        let mut was_empty = false;
        for n in 1..=4 {
            let b = bleu_n(candidate, gold, n)?;
            *bleu_sums.get_mut(&n).expect("seeded above") += b.score;
            was_empty |= b.empty_candidate;
        }
        let r = rouge_l(candidate, gold)?;
        rouge_sum += r.score;
        was_empty |= r.empty_candidate;
        if was_empty {
            empty += 1;
        }
    }
    let n = indices.len() as f64;
    Ok(MetricsReport {
        em1: em1_hits as f64 / n,
        em10: em10_hits as f64 / n,
        bleu: bleu_sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        rouge_l: rouge_sum / n,
        questions: indices.len(),
        empty_candidates: empty,
    })
}

/// Synonym table for the perturbation probe plus the seed that fixes
/// each question's substitution draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLexicon {
    pub synonyms: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PerturbationLexicon {
    fn default() -> Self {
        PerturbationLexicon {
            synonyms: default_lexicon(),
            seed: 0,
        }
    }
}

impl PerturbationLexicon {
    pub fn validate(&self) -> Result<()> {
        for (word, synonyms) in &self.synonyms {
            if synonyms.is_empty() {
                return Err(Error::validation(
                    "perturbation lexicon",
                    word,
                    "synonym list is empty",
                ));
            }
            if synonyms.iter().any(|s| s == word) {
                return Err(Error::validation(
                    "perturbation lexicon",
                    word,
                    "a synonym equals its key",
                ));
            }
        }
        Ok(())
    }

    /// Reads the on-disk form: a bare `{"token": ["syn1", ...]}` map.
    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let synonyms: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&body).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: None,
                message: e.to_string(),
            })?;
        let lex = PerturbationLexicon { synonyms, seed };
        lex.validate()?;
        Ok(lex)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body =
            serde_json::to_string_pretty(&self.synonyms).expect("map serialization cannot fail");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Replaces every whole word that has a lexicon entry with a
/// seeded-uniform synonym choice; casing of the match is ignored, all
/// other characters and every annotation stay untouched. Deterministic
/// per (lexicon seed, question id).
pub fn perturb_questions(
    questions: &[QuestionRecord],
    lexicon: &PerturbationLexicon,
) -> Result<Vec<QuestionRecord>> {
    lexicon.validate()?;
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(lexicon.seed, &q.question_id));
        let mut rewritten = String::with_capacity(q.question.len());
        let mut word = String::new();
        let flush = |word: &mut String, rewritten: &mut String, rng: &mut ChaCha8Rng| {
            if word.is_empty() {
                return;
            }
            match lexicon.synonyms.get(&word.to_lowercase()) {
                Some(synonyms) => {
                    let pick = rng.random_range(0..synonyms.len());
                    rewritten.push_str(&synonyms[pick]);
                }
                None => rewritten.push_str(word),
            }
            word.clear();
        };
        for ch in q.question.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                flush(&mut word, &mut rewritten, &mut rng);
                rewritten.push(ch);
            }
        }
        flush(&mut word, &mut rewritten, &mut rng);
        let mut perturbed = q.clone();
        perturbed.question = rewritten;
        out.push(perturbed);
    }
    Ok(out)
}

/// EM@1 before and after synonym substitution on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    pub em1_before: f64,
    pub em1_after: f64,
    /// before − after: how much accuracy the wording change destroys.
    pub degradation: f64,
    pub questions: usize,
}

/// Measures how much of the model's accuracy survives rewording.
/// Object tokens are canonicalization-invariant, so a grounded model
/// holds its score while a text-shortcut model drops.
pub fn shortcut_degradation(
    state: &ModelState,
    ds: &SyntheticDataset,
    labels: &crate::labelgen::LabelGenConfig,
    lexicon: &PerturbationLexicon,
) -> Result<ShortcutReport> {
    let data = TrainData::from_dataset(ds, labels)?;
    let (_, val_idx) = data.split();
    let before = evaluate(state, &data, &val_idx)?;

    let perturbed = SyntheticDataset {
        spec: ds.spec.clone(),
        scenes: ds.scenes.clone(),
        questions: perturb_questions(&ds.questions, lexicon)?,
    };
    let data_after = TrainData::from_dataset(&perturbed, labels)?;
    let after = evaluate(state, &data_after, &val_idx)?;

    Ok(ShortcutReport {
        em1_before: before.em1,
        em1_after: after.em1,
        degradation: before.em1 - after.em1,
        questions: val_idx.len(),
    })
}

/// One trained supervision configuration and its held-out metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub supervision: SupervisionFlags,
    pub tag: String,
    pub metrics: MetricsReport,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// The published supervision grid: answer-only, the three two-phase
/// combinations minus one, and the full stack.
pub fn default_ablation_rows() -> Vec<SupervisionFlags> {
    let full = SupervisionFlags::full();
    vec![
        SupervisionFlags::answer_only(),
        SupervisionFlags { if_: false, ..full },
        SupervisionFlags { fg: false, ..full },
        SupervisionFlags { cg: false, ..full },
        full,
    ]
}

/// Trains one model per supervision row with identical seed/data and
/// evaluates each on the shared validation split.
pub fn run_ablation(
    cfg: &TrainConfig,
    data: &TrainData,
    rows: &[SupervisionFlags],
) -> Result<AblationTable> {
    if rows.is_empty() {
        return Err(Error::validation(
            "run_ablation",
            "rows",
            "no rows requested",
        ));
    }
    let (_, val_idx) = data.split();
    let mut out = Vec::with_capacity(rows.len());
    for flags in rows {
        flags.validate()?;
        let row_cfg = TrainConfig {
            supervision: *flags,
            ..cfg.clone()
        };
        let FitResult {
            state, best_epoch, ..
        } = fit(&row_cfg, data)?;
        let metrics = evaluate(&state, data, &val_idx)?;
        out.push(AblationRow {
            supervision: *flags,
            tag: flags.tag(),
            metrics,
            best_epoch,
        });
    }
    Ok(AblationTable { rows: out })
}

impl AblationTable {
    /// CSV with scores ×100 to 2 decimals, one row per configuration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cg,fg,if,vqa,em1,em10,bleu1,bleu2,bleu3,bleu4,rouge_l\n");
        for row in &self.rows {
            let f = &row.supervision;
            let m = &row.metrics;
            out.push_str(&format!(
                "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
                f.cg as u8,
                f.fg as u8,
                f.if_ as u8,
                f.vqa as u8,
                100.0 * m.em1,
                100.0 * m.em10,
                100.0 * m.bleu[&1],
                100.0 * m.bleu[&2],
                100.0 * m.bleu[&3],
                100.0 * m.bleu[&4],
                100.0 * m.rouge_l,
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn refs(rs: &[&str]) -> Vec<String> {
        rs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn canonicalize_strips_case_and_punctuation() {
        assert_eq!(canonicalize("  The CAT, sat!  "), "the cat sat");
        assert_eq!(canonicalize("window"), "window");
        assert_eq!(canonicalize("!!!"), "");
    }

    #[test]
    fn em_at_k_spec_cases() {
        let ranked: Vec<String> = (0..12).map(|i| format!("a{i}")).collect();
        assert!(em_at_k(&refs(&["Window"]), &refs(&["window"]), 1).unwrap());
        let mut with_gold_at_7 = ranked.clone();
        with_gold_at_7[6] = "window".to_string();
        assert!(!em_at_k(&with_gold_at_7, &refs(&["window"]), 1).unwrap());
        assert!(em_at_k(&with_gold_at_7, &refs(&["window"]), 10).unwrap());
        assert!(em_at_k(&ranked, &refs(&["zzz"]), 0).is_err());
    }

    #[test]
    fn em_corpus_mean_matches_recount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let vocab: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let mut hits = 0usize;
        let total = 200;
        let mut measured = 0usize;
        for _ in 0..total {
            let mut ranked = vocab.clone();
            for i in (1..ranked.len()).rev() {
                ranked.swap(i, rng.random_range(0..=i));
            }
            let gold = vec![vocab[rng.random_range(0..vocab.len())].clone()];
            let k = 3;
            if ranked[..k].contains(&gold[0]) {
                hits += 1;
            }
            if em_at_k(&ranked, &gold, k).unwrap() {
                measured += 1;
            }
        }
        assert_eq!(hits, measured);
    }

    #[test]
    fn rank_answers_orders_by_logit_then_index() {
        let vocab = AnswerVocab::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
        let logits = Tensor::vector(&[0.5, 2.0, 0.5, -1.0]);
        let ranked = rank_answers(&logits, &vocab).unwrap();
        assert_eq!(ranked, vec!["b", "a", "c", "d"]);
    }

    #[test]
    fn bleu_identity_and_brevity_goldens() {
        let one = bleu_n("the cat sat", &refs(&["the cat sat"]), 1).unwrap();
        assert!((one.score - 1.0).abs() < 1e-12);
        let short = bleu_n("the cat", &refs(&["the cat sat"]), 1).unwrap();
        let expected = (1.0f64 - 1.5).exp();
        assert!(
            (short.score - expected).abs() < 1e-12,
            "got {}, want {expected}",
            short.score
        );
        let disjoint = bleu_n("dog ran", &refs(&["the cat sat"]), 1).unwrap();
        assert_eq!(disjoint.score, 0.0);
    }

    #[test]
    fn bleu_clips_repeated_candidate_tokens() {
        // "the the the" vs "the cat": one clipped match out of three
        let s = bleu_n("the the the", &refs(&["the cat"]), 1).unwrap();
        let expected = 1.0 / 3.0; // c=3 > r=2 so BP=1
        assert!((s.score - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_empty_candidate_flags() {
        let s = bleu_n("", &refs(&["the cat"]), 2).unwrap();
        assert_eq!(s.score, 0.0);
        assert!(s.empty_candidate);
        assert!(bleu_n("x", &refs(&["y"]), 0).is_err());
        assert!(bleu_n("x", &refs(&["y"]), 5).is_err());
        assert!(bleu_n("x", &[], 1).is_err());
    }

    #[test]
    fn bleu_too_short_for_order_scores_zero() {
        let s = bleu_n("cat", &refs(&["the cat sat"]), 2).unwrap();
        assert_eq!(s.score, 0.0);
        assert!(!s.empty_candidate);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let same = rouge_l("the cat sat", &refs(&["the cat sat"])).unwrap();
        assert!((same.score - 1.0).abs() < 1e-12);
        let none = rouge_l("dog ran", &refs(&["the cat sat"])).unwrap();
        assert_eq!(none.score, 0.0);
        let empty = rouge_l("", &refs(&["x"])).unwrap();
        assert!(empty.empty_candidate);
    }

    #[test]
    fn rouge_hand_oracle_with_beta() {
        // cand "the cat", ref "the cat sat": LCS=2, R=2/3, P=1
        let s = rouge_l("the cat", &refs(&["the cat sat"])).unwrap();
        let (r, p, b2) = (2.0 / 3.0, 1.0, ROUGE_BETA * ROUGE_BETA);
        let expected = (1.0 + b2) * r * p / (r + b2 * p);
        assert!((s.score - expected).abs() < 1e-12);
        // max over references picks the better one
        let multi = rouge_l("the cat", &refs(&["dog", "the cat"])).unwrap();
        assert!((multi.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn improvement_ratio_published_rows() {
        let g1 = improvement_ratio(22.05, 22.20, 22.65).unwrap();
        assert_eq!(format!("{g1:.2}"), "4.00");
        let g2 = improvement_ratio(22.05, 22.20, 23.72).unwrap();
        assert_eq!(format!("{g2:.2}"), "11.13");
        let identity = improvement_ratio(22.05, 22.20, 22.20).unwrap();
        assert_eq!(format!("{identity:.2}"), "1.00");
        match improvement_ratio(5.0, 5.0, 9.0) {
            Err(Error::ZeroDenominator { score }) => assert_eq!(score, 5.0),
            other => panic!("expected zero-denominator error, got {other:?}"),
        }
    }

    fn sample_question(id: &str, text: &str) -> QuestionRecord {
        QuestionRecord {
            question_id: id.to_string(),
            scene_id: "s".to_string(),
            question: text.to_string(),
            answers: vec!["red".to_string()],
            target_ids: BTreeSet::from([0]),
            anchor_ids: None,
        }
    }

    #[test]
    fn perturbation_spec_cases() {
        let lex = PerturbationLexicon {
            synonyms: BTreeMap::from([("couch".to_string(), vec!["sofa".to_string()])]),
            seed: 0,
        };
        let qs = vec![sample_question("q1", "the couch near the door")];
        let out = perturb_questions(&qs, &lex).unwrap();
        assert_eq!(out[0].question, "the sofa near the door");
        assert_eq!(out[0].answers, qs[0].answers);
        assert_eq!(out[0].target_ids, qs[0].target_ids);

        let empty = PerturbationLexicon {
            synonyms: BTreeMap::new(),
            seed: 0,
        };
        let out = perturb_questions(&qs, &empty).unwrap();
        assert_eq!(out[0].question, qs[0].question);

        let again = perturb_questions(&qs, &lex).unwrap();
        let again2 = perturb_questions(&qs, &lex).unwrap();
        assert_eq!(again, again2);
    }

    #[test]
    fn perturbation_matches_whole_words_case_insensitively() {
        let lex = PerturbationLexicon {
            synonyms: BTreeMap::from([("cat".to_string(), vec!["feline".to_string()])]),
            seed: 0,
        };
        let qs = vec![sample_question("q1", "The CAT chased the catalog, cat!")];
        let out = perturb_questions(&qs, &lex).unwrap();
        assert_eq!(out[0].question, "The feline chased the catalog, feline!");
    }

    #[test]
    fn lexicon_round_trips_and_validates() {
        let lex = PerturbationLexicon::default();
        lex.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.json");
        lex.save(&path).unwrap();
        let back = PerturbationLexicon::load(&path, lex.seed).unwrap();
        assert_eq!(lex, back);

        let bad = PerturbationLexicon {
            synonyms: BTreeMap::from([("x".to_string(), vec!["x".to_string()])]),
            seed: 0,
        };
        assert!(bad.validate().is_err());
        let empty_list = PerturbationLexicon {
            synonyms: BTreeMap::from([("x".to_string(), vec![])]),
            seed: 0,
        };
        assert!(empty_list.validate().is_err());
    }

    #[test]
    fn default_ablation_grid_shape() {
        let rows = default_ablation_rows();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0], SupervisionFlags::answer_only());
        assert!(rows.iter().all(|r| r.vqa));
        let tags: Vec<String> = rows.iter().map(|r| r.tag()).collect();
        assert_eq!(
            tags,
            vec!["vqa", "cg+fg+vqa", "cg+if+vqa", "fg+if+vqa", "cg+fg+if+vqa"]
        );
    }

    #[test]
    fn ngram_metrics_match_reference_golden_file() {
        #[derive(Deserialize)]
        struct Case {
            candidate: String,
            references: Vec<String>,
            bleu: BTreeMap<usize, f64>,
            rouge_l: f64,
        }
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/metric_golden.json");
        let cases: Vec<Case> =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(cases.len(), 20);
        for case in &cases {
            for n in 1..=4 {
                let got = bleu_n(&case.candidate, &case.references, n).unwrap().score;
                assert!(
                    (got - case.bleu[&n]).abs() < 1e-6,
                    "BLEU-{n} mismatch on {:?}: got {got}, reference {}",
                    case.candidate,
                    case.bleu[&n]
                );
            }
            let got = rouge_l(&case.candidate, &case.references).unwrap().score;
            assert!(
                (got - case.rouge_l).abs() < 1e-6,
                "ROUGE-L mismatch on {:?}: got {got}, reference {}",
                case.candidate,
                case.rouge_l
            );
        }
    }

    proptest! {
        #[test]
        fn em_monotone_in_k(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vocab: Vec<String> = (0..15).map(|i| format!("w{i}")).collect();
            let mut ranked = vocab.clone();
            for i in (1..ranked.len()).rev() {
                ranked.swap(i, rng.random_range(0..=i));
            }
            let gold = vec![vocab[rng.random_range(0..vocab.len())].clone()];
            let mut prev = false;
            for k in 1..=ranked.len() {
                let now = em_at_k(&ranked, &gold, k).unwrap();
                prop_assert!(now || !prev, "EM@k dropped from true to false at k={k}");
                prev = now;
            }
            prop_assert!(prev, "gold is in the vocab so EM@V must be 1");
        }

        #[test]
        fn improvement_ratio_affine_invariant(
            base in -50.0f64..50.0,
            delta in 0.01f64..5.0,
            mask in -50.0f64..50.0,
            scale in 0.01f64..20.0,
            shift in -100.0f64..100.0,
        ) {
            let (a, b, c) = (base, base + delta, mask);
            let g = improvement_ratio(a, b, c).unwrap();
            let g2 = improvement_ratio(scale * a + shift, scale * b + shift, scale * c + shift).unwrap();
            prop_assert!((g - g2).abs() < 1e-6 * (1.0 + g.abs()), "γ {g} vs affine {g2}");
        }

        #[test]
        fn perturbation_edit_locality(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = ["chair", "table", "red", "near", "the", "what", "door"];
            let words: Vec<&str> = (0..rng.random_range(1..12))
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect();
            let text = words.join(" ");
            let lex = PerturbationLexicon {
                synonyms: BTreeMap::from([
                    ("chair".to_string(), vec!["seat".to_string(), "stool".to_string()]),
                    ("table".to_string(), vec!["desk".to_string()]),
                ]),
                seed,
            };
            let qs = vec![sample_question("qx", &text)];
            let out = perturb_questions(&qs, &lex).unwrap();
            let out_words: Vec<&str> = out[0].question.split(' ').collect();
            prop_assert_eq!(out_words.len(), words.len());
            for (orig, new) in words.iter().zip(&out_words) {
                match lex.synonyms.get(*orig) {
                    Some(syns) => prop_assert!(syns.iter().any(|s| s == new),
                        "{} should become one of its synonyms, got {}", orig, new),
                    None => prop_assert_eq!(orig, new, "untouched word changed"),
                }
            }
        }
    }
}
