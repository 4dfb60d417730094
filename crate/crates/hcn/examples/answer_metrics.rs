//! Scores free-form answers against references with exact match,
//! clipped n-gram BLEU, and LCS-based ROUGE-L.
//!
//! Run with: cargo run --example answer_metrics

use hcn::eval::{bleu_n, em_at_k, rouge_l};

fn main() -> hcn::Result<()> {
    let cases = [
        ("the red chair", vec!["the red chair".to_string()]),
        ("the cat", vec!["the cat sat".to_string()]),
        (
            "a large wooden table",
            vec!["the wooden table".to_string(), "a table".to_string()],
        ),
        ("blue", vec!["red".to_string()]),
    ];

    println!(
        "{:<22} {:<18} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "candidate", "first reference", "bleu1", "bleu2", "bleu3", "bleu4", "rougeL"
    );
    for (cand, refs) in &cases {
        let b: Vec<f64> = (1..=4)
            .map(|n| bleu_n(cand, refs, n).map(|s| s.score))
            .collect::<hcn::Result<_>>()?;
        let r = rouge_l(cand, refs)?;
        println!(
            "{:<22} {:<18} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            cand, refs[0], b[0], b[1], b[2], b[3], r.score
        );
    }

    // "the cat" vs "the cat sat": perfect unigram precision shrunk by the
    // brevity penalty exp(1 - 3/2) ≈ 0.6065.
    let bp_case = bleu_n("the cat", &["the cat sat".to_string()], 1)?;
    println!("\nbrevity penalty example: BLEU-1 = {:.4}", bp_case.score);

    // Exact match over a ranked answer list: @1 demands the top answer,
    // @10 scans the first ten.
    let ranked: Vec<String> = ["blue", "red", "green"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let gold = vec!["red".to_string()];
    println!(
        "ranked {:?} vs gold {:?}: EM@1={} EM@10={}",
        ranked,
        gold,
        em_at_k(&ranked, &gold, 1)?,
        em_at_k(&ranked, &gold, 10)?
    );
    Ok(())
}
