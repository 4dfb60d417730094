//! Trains the full three-stage model on a small synthetic corpus and
//! prints the loss breakdown as it converges.
//!
//! Run with: cargo run --example train_toy

use hcn::labelgen::LabelGenConfig;
use hcn::synth::{make_synthetic_dataset, Featurizer, SyntheticSpec};
use hcn::train::{fit, LossWeights, SupervisionFlags, TrainConfig, TrainData};

fn main() -> hcn::Result<()> {
    let spec = SyntheticSpec {
        n_scenes: 120,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_dataset(&spec)?;
    let labels = LabelGenConfig::default();
    let data = TrainData::from_dataset(&ds, &labels)?;
    let (train_idx, val_idx) = data.split();
    println!("samples: {} train / {} val", train_idx.len(), val_idx.len());

    let cfg = TrainConfig {
        model: Featurizer::new(&spec)?.model_config()?,
        epochs: 40,
        batch_size: 16,
        optimizer: Default::default(),
        learning_rate: 3e-3,
        seed: 3,
        loss_weights: LossWeights::default(),
        supervision: SupervisionFlags::full(),
        labels,
        target_val_em1: Some(0.999),
    };
    let result = fit(&cfg, &data)?;

    println!(
        "{:>5} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "epoch", "total", "cg", "fg", "if", "ans", "val_em1"
    );
    for row in &result.log {
        println!(
            "{:>5} {:>10.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.3}",
            row.epoch,
            row.loss_total,
            row.loss_cg,
            row.loss_fg,
            row.loss_if,
            row.loss_ans,
            row.val_em1
        );
    }
    println!(
        "\nbest: epoch {} at val EM@1 {:.3}",
        result.best_epoch, result.best_val_em1
    );
    Ok(())
}
