//! Plants a question-text shortcut in a synthetic corpus (one
//! anchor/target pairing whose answer is "red" 90% of the time), trains
//! with and without mask supervision, then knocks the shortcut out with
//! synonym perturbation and reports the EM@1 damage.
//!
//! Run with: cargo run --example shortcut_probe

use hcn::eval::{shortcut_degradation, PerturbationLexicon};
use hcn::labelgen::LabelGenConfig;
use hcn::synth::{make_synthetic_dataset, Featurizer, ShortcutBait, SyntheticSpec};
use hcn::train::{fit, SupervisionFlags, TrainConfig, TrainData};

fn main() -> hcn::Result<()> {
    let spec = SyntheticSpec {
        n_scenes: 200,
        seed: 11,
        shortcut_bait: Some(ShortcutBait {
            anchor_label: "chair".into(),
            target_label: "table".into(),
            biased_answer: "red".into(),
            bias_rate: 0.9,
            fraction: 0.5,
        }),
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_dataset(&spec)?;
    let n_bait = ds
        .questions
        .iter()
        .filter(|q| q.question.contains("table") && q.question.contains("chair"))
        .count();
    println!(
        "corpus: {} questions, {} carrying the bait pairing",
        ds.questions.len(),
        n_bait
    );

    let labels = LabelGenConfig::default();
    let data = TrainData::from_dataset(&ds, &labels)?;
    let lexicon = PerturbationLexicon::default();

    println!(
        "\n{:<12} {:>10} {:>10} {:>12}",
        "supervision", "em1", "perturbed", "degradation"
    );
    for (name, sup) in [
        ("full", SupervisionFlags::full()),
        ("answer-only", SupervisionFlags::answer_only()),
    ] {
        let cfg = TrainConfig {
            model: Featurizer::new(&spec)?.model_config()?,
            epochs: 200,
            batch_size: 16,
            optimizer: Default::default(),
            learning_rate: 3e-3,
            seed: 11,
            loss_weights: Default::default(),
            supervision: sup,
            labels,
            target_val_em1: Some(0.999),
        };
        let result = fit(&cfg, &data)?;
        let report = shortcut_degradation(&result.state, &ds, &labels, &lexicon)?;
        println!(
            "{:<12} {:>10.3} {:>10.3} {:>12.3}",
            name, report.em1_before, report.em1_after, report.degradation
        );
    }

    // Word-level synonym swaps change raw question text (and therefore
    // hashed text tokens) while leaving annotations untouched, so a model
    // that keyed on the bait phrasing loses its crutch.
    let sample = &ds
        .questions
        .iter()
        .find(|q| q.question.contains("table"))
        .unwrap();
    let perturbed = hcn::eval::perturb_questions(std::slice::from_ref(sample), &lexicon)?;
    println!("\nbefore: {}", sample.question);
    println!("after:  {}", perturbed[0].question);
    Ok(())
}
