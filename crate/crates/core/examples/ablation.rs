//! Train every combination of the three regularizers on a tiny model and
//! print the table as CSV.
//!
//! `cargo run --release --example ablation`

use divpatch::train::{ablate, ablation_csv, Component, TrainConfig};

fn main() -> divpatch::Result<()> {
    let mut cfg = TrainConfig::default();
    for kv in [
        "image_size=8",
        "dim=16",
        "depth=2",
        "heads=2",
        "mlp_ratio=2",
        "train_size=128",
        "eval_size=64",
        "batch_size=16",
        "epochs=1",
        "lr=0.001",
    ] {
        cfg.apply_override(kv)?;
    }
    let rows = ablate(
        &cfg,
        &[Component::Cos, Component::Contrastive, Component::Mixing],
    )?;
    for r in &rows {
        eprintln!("{:<28} top1 {:.3}  P {:.4}", r.tag(), r.top1, r.final_p);
    }
    print!("{}", ablation_csv(&rows)?);
    Ok(())
}
