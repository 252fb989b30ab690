//! Train a plain transformer briefly and print how patch similarity grows
//! with depth before and after training.
//!
//! `cargo run --release --example collapse_profile`

use divpatch::losses::LossWeights;
use divpatch::metrics::{profile, DiversityProfile};
use divpatch::train::{train, TrainConfig};
use divpatch::vit::ViTParams;

fn show(title: &str, p: &DiversityProfile) {
    println!("{title}");
    for s in &p.layers {
        println!("  layer {:>2}  P {:.4} ± {:.4}", s.layer, s.mean, s.std);
    }
}

fn main() -> divpatch::Result<()> {
    let mut cfg = TrainConfig::default();
    for kv in [
        "depth=4",
        "dim=32",
        "heads=2",
        "mlp_ratio=2",
        "image_size=16",
        "train_size=256",
        "eval_size=64",
        "batch_size=32",
        "epochs=3",
    ] {
        cfg.apply_override(kv)?;
    }
    cfg.weights = LossWeights::baseline();

    let (_, eval) = cfg.data.load(cfg.seed)?;
    let eval = eval.to_patches(cfg.model.patch_size)?;
    let init = ViTParams::<f32>::init(&cfg.model, cfg.seed)?;
    show("at initialization", &profile(&init, &eval.patches, 64)?);

    let outcome = train(&cfg)?;
    show(
        &format!("after training (top1 {:.3})", outcome.final_top1()),
        &profile(&outcome.params, &eval.patches, 64)?,
    );
    Ok(())
}
