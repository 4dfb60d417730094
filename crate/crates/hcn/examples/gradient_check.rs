//! Central-finite-difference check of the reverse-mode gradients through
//! the entire stack: token extractor, three mask stages, reweighting,
//! answer head, and the combined loss.
//!
//! Run with: cargo run --example gradient_check

use hcn::cli::full_model_gradcheck;

fn main() -> hcn::Result<()> {
    let report = full_model_gradcheck(0, 1e-5, 1e-4)?;
    println!("elements checked: {}", report.checked);
    println!("max relative error: {:.3e}", report.max_rel_err);
    println!("tolerance: {:.0e}", report.tolerance);
    if let Some(worst) = &report.worst {
        println!(
            "worst element: {}[{}] analytic={:+.6e} numeric={:+.6e}",
            worst.param, worst.index, worst.analytic, worst.numeric
        );
    }
    println!("{}", if report.passed() { "PASS" } else { "FAIL" });
    Ok(())
}
