//! Computes the concentration-gain ratio γ: how much more a model improves
//! when supervised with object masks rather than object-id targets, per
//! unit of id-supervision gain.
//!
//! Run with: cargo run --example grounding_gain

use hcn::eval::improvement_ratio;

fn main() -> hcn::Result<()> {
    // (no grounding supervision, id supervision, mask supervision) EM@1
    // triplets from two runs of the same benchmark.
    let triplets = [(22.05, 22.20, 22.65), (22.05, 22.20, 23.72)];

    println!("{:>8} {:>8} {:>8} {:>8}", "none", "ids", "masks", "gamma");
    for (none, ids, masks) in triplets {
        let gamma = improvement_ratio(none, ids, masks)?;
        println!("{none:>8.2} {ids:>8.2} {masks:>8.2} {gamma:>8.2}");
    }

    // γ is a ratio of differences, so it is invariant to affine rescaling
    // of the underlying metric.
    let base = improvement_ratio(22.05, 22.20, 22.65)?;
    let scaled = improvement_ratio(22.05 * 3.0 + 5.0, 22.20 * 3.0 + 5.0, 22.65 * 3.0 + 5.0)?;
    println!("\naffine invariance: {base:.6} == {scaled:.6}");
    Ok(())
}
