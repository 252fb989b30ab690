//! Evaluate the three regularizers on collapsed and on spread-out tokens.
//!
//! `cargo run --release --example diversity_losses`

use divpatch::losses::{contrastive_loss, cosine_loss, mixing_loss, PatchLabels};
use divpatch::metrics::patch_cosine;
use divpatch::{Tape, Tensor};

fn report(name: &str, tokens: &Tensor<f64>) -> divpatch::Result<()> {
    let (n, d) = (tokens.shape()[0], tokens.shape()[1]);
    let mut t = Tape::<f64>::new();
    let h = t.constant(tokens.clone().reshape([1, n, d])?);
    let cos = cosine_loss(&mut t, h)?;
    // Early-layer reference: each patch a distinct basis vector.
    let reference = t.constant(Tensor::from_fn([1, n, d], |i| {
        if i / d == i % d {
            1.0
        } else {
            0.0
        }
    }));
    let con = contrastive_loss(&mut t, reference, h)?;
    let w = t.constant(Tensor::from_fn([d, 2], |i| {
        if i % 2 == (i / 2) % 2 {
            1.0
        } else {
            -1.0
        }
    }));
    let b = t.constant(Tensor::zeros([2]));
    let y_patch = vec![vec![0, 1, 0, 1]];
    let masks = vec![vec![true, false, true, false]];
    let labels = PatchLabels {
        y_patch: &y_patch,
        masks: &masks,
        y0: &[0],
        y1: &[1],
    };
    let mix = mixing_loss(&mut t, h, (w, b), &labels, false)?;
    let v = |x| t.value(x).data()[0];
    println!(
        "{name:<10} P {:.3}  cos {:.3}  contrastive {:.3}  mixing {:.3}",
        patch_cosine(tokens, false)?,
        v(cos),
        v(con),
        v(mix)
    );
    Ok(())
}

fn main() -> divpatch::Result<()> {
    let collapsed = Tensor::from_fn([4, 4], |i| 1.0 + 0.01 * (i / 4) as f64);
    let diverse = Tensor::from_fn([4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    report("collapsed", &collapsed)?;
    report("diverse", &diverse)?;
    Ok(())
}
