//! Mix two synthetic images at the patch level and draw the masks.
//!
//! `cargo run --release --example patch_mixing`

use divpatch::data::{gen_synthetic, DatasetSpec};
use divpatch::mixing::{mix_pair, LabelLambda, MixMode, MixSpec};
use divpatch::rng;
use divpatch::vit::patchify;

fn main() -> divpatch::Result<()> {
    let spec = DatasetSpec {
        image_size: 16,
        ..DatasetSpec::default()
    };
    let (a, ya) = gen_synthetic(&spec, 7, 0);
    let (b, yb) = gen_synthetic(&spec, 7, 1);
    let (pa, pb) = (patchify(&a, 2)?, patchify(&b, 2)?);
    let side = 8;
    let mut stream = rng::stream(7, &[1]);
    for mode in [MixMode::Random, MixMode::Block] {
        let mix = MixSpec {
            mode,
            alpha: 1.0,
            label_lambda: LabelLambda::Realized,
        };
        let row = mix_pair(&pa, ya, &pb, yb, spec.num_classes, &mix, &mut stream)?;
        println!(
            "{mode}: λ sampled {:.3}, realized {:.3}, soft label {:?}",
            row.lambda_sampled, row.lambda_eff, row.y_mix
        );
        for r in 0..side {
            let line: String = row.mask[r * side..(r + 1) * side]
                .iter()
                .map(|&m| if m { 'a' } else { 'b' })
                .collect();
            println!("  {line}");
        }
    }
    Ok(())
}
