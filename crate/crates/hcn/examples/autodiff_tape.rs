//! Shows the reverse-mode tape directly: build a small expression, read
//! its value, and pull exact gradients back to the leaves.
//!
//! Run with: cargo run --example autodiff_tape

use hcn::tensor::{Tape, Tensor};

fn main() -> hcn::Result<()> {
    let mut tape = Tape::new();

    // loss = mean(sigmoid(x · w + b))
    let x = tape.leaf(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?);
    let w = tape.leaf(Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6])?);
    let b = tape.leaf(Tensor::vector(&[0.05, -0.05]));

    let xw = tape.matmul(x, w)?;
    let pre = tape.add(xw, b)?;
    let act = tape.sigmoid(pre);
    let loss = tape.mean(act);

    println!("loss = {:.6}", tape.value(loss).item());

    let grads = tape.backward(loss)?;
    for (name, var) in [("x", x), ("w", w), ("b", b)] {
        let g = grads.get(var).expect("leaf participates in the loss");
        println!("d loss / d {name} (shape {:?}): {:?}", g.shape(), g.data());
    }

    // Constants are excluded from the backward sweep entirely.
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(&[0.3, 0.8]));
    let frozen = tape.constant(Tensor::vector(&[1.0, 2.0]));
    let prod = tape.mul(p, frozen)?;
    let loss = tape.mean(prod);
    let grads = tape.backward(loss)?;
    println!(
        "\nleaf grad present: {}, constant grad present: {}",
        grads.get(p).is_some(),
        grads.get(frozen).is_some()
    );
    Ok(())
}
