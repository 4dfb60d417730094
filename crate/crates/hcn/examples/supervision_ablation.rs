//! Trains one model per supervision configuration — answer-only, each
//! two-stage combination, and the full three-stage stack — on identical
//! data and prints the held-out comparison as CSV.
//!
//! Run with: cargo run --example supervision_ablation

use hcn::eval::{default_ablation_rows, run_ablation};
use hcn::labelgen::LabelGenConfig;
use hcn::synth::{make_synthetic_dataset, Featurizer, SyntheticSpec};
use hcn::train::{TrainConfig, TrainData};

fn main() -> hcn::Result<()> {
    let spec = SyntheticSpec {
        n_scenes: 120,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_dataset(&spec)?;
    let labels = LabelGenConfig::default();
    let data = TrainData::from_dataset(&ds, &labels)?;

    let cfg = TrainConfig {
        model: Featurizer::new(&spec)?.model_config()?,
        epochs: 30,
        batch_size: 16,
        optimizer: Default::default(),
        learning_rate: 3e-3,
        seed: 5,
        loss_weights: Default::default(),
        supervision: Default::default(),
        labels,
        target_val_em1: Some(0.999),
    };

    let rows = default_ablation_rows();
    println!(
        "training {} configurations on {} samples...",
        rows.len(),
        data.samples.len()
    );
    let table = run_ablation(&cfg, &data, &rows)?;
    for row in &table.rows {
        println!("  {:<16} stopped at epoch {}", row.tag, row.best_epoch);
    }
    println!("\n{}", table.to_csv());
    Ok(())
}
