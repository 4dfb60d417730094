//! Counts forward-pass FLOPs layer by layer (2 · in · out · rows per
//! dense layer) and reports the mask stack's share of a hypothetical
//! backbone budget.
//!
//! Run with: cargo run --example flops_report

use hcn::model::count_flops;
use hcn::synth::{Featurizer, SyntheticSpec};

fn main() -> hcn::Result<()> {
    let cfg = Featurizer::new(&SyntheticSpec::default())?.model_config()?;
    let backbone = 1.2e11; // a typical point-cloud encoder forward pass
    let report = count_flops(&cfg, 8, 9, Some(backbone))?;

    println!("{:<16} {:>12}", "layer", "flops");
    for layer in &report.layers {
        println!("{:<16} {:>12}", layer.name, layer.flops);
    }
    println!("\nextractor total: {:>12}", report.extractor_total);
    println!("mask-stack total: {:>11}", report.hsm_total);
    println!("answer-head total: {:>10}", report.answer_total);
    println!("model total: {:>16}", report.model_total);
    println!(
        "\nmask stack / backbone: {:.6}% of {:.1e} FLOPs",
        100.0 * report.hsm_to_backbone_ratio,
        backbone
    );
    Ok(())
}
