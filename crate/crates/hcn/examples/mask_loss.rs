//! The class-rebalanced binary cross-entropy used for every mask stage,
//! plus the fixed-weight combination of the three stages.
//!
//! Run with: cargo run --example mask_loss

use hcn::tensor::{Tape, Tensor};
use hcn::train::{combine_hsm, LossWeights, SupervisionFlags};

fn main() -> hcn::Result<()> {
    // Uninformative predictions on a balanced pair: both the positive and
    // the negative class contribute ln 2, and the per-class normalization
    // makes the total exactly 2 ln 2 regardless of class sizes.
    let mut tape = Tape::new();
    let pred = tape.leaf(Tensor::vector(&[0.5, 0.5]));
    let loss = tape.weighted_bce(pred, &[true, false])?;
    println!(
        "weighted BCE at p=0.5 on one positive, one negative: {:.9}",
        tape.value(loss).item()
    );
    println!(
        "2 ln 2                                            : {:.9}",
        2.0 * 2f64.ln()
    );

    // One-sided labels would zero out a class weight, so the mask head
    // falls back to the unweighted mean in that case.
    let mut tape = Tape::new();
    let pred = tape.leaf(Tensor::vector(&[0.9, 0.8, 0.7]));
    let loss = tape.bce_auto(pred, &[true, true, true])?;
    println!(
        "\nall-positive labels fall back to mean BCE: {:.6}",
        tape.value(loss).item()
    );

    // Stage losses combine with fixed weights; disabling a stage removes
    // its term entirely rather than re-normalizing the rest.
    let w = LossWeights::default();
    println!("\nstage weights: cg={} fg={} if={}", w.cg, w.fg, w.if_);
    let (l_cg, l_fg, l_if) = (0.40, 0.30, 0.20);
    for flags in [
        SupervisionFlags::full(),
        SupervisionFlags {
            cg: false,
            ..SupervisionFlags::full()
        },
        SupervisionFlags::answer_only(),
    ] {
        println!(
            "  {:<16} -> combined mask loss {:.4}",
            flags.tag(),
            combine_hsm(l_cg, l_fg, l_if, &w, &flags)
        );
    }
    Ok(())
}
