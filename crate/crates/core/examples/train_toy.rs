//! Train with all three regularizers on the synthetic gratings and write the
//! run artifacts to a directory.
//!
//! `cargo run --release --example train_toy -- [output_dir] [key=value ...]`

use std::path::PathBuf;

use divpatch::train::{train, TrainConfig};

fn main() -> divpatch::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "runs/toy".into()));
    let mut cfg = TrainConfig::default();
    for kv in [
        "depth=4",
        "dim=32",
        "heads=2",
        "image_size=16",
        "train_size=512",
        "eval_size=128",
        "epochs=3",
    ] {
        cfg.apply_override(kv)?;
    }
    for kv in args {
        cfg.apply_override(&kv)?;
    }
    cfg.output_dir = Some(dir.clone());
    cfg.validate()?;

    let outcome = train(&cfg)?;
    for e in &outcome.log.epochs {
        println!(
            "epoch {}  loss {:.4}  top1 {:.3}  final-layer P {:.4}",
            e.epoch,
            e.train_loss,
            e.eval_top1,
            e.profile.last().map_or(f64::NAN, |s| s.mean)
        );
    }
    let last = outcome.log.steps.last().expect("at least one step");
    let r = &last.report;
    println!(
        "last step: ce {:.4} cos {:.4} contrastive {:.4} mixing {:.4}",
        r.ce_class, r.l_cos, r.l_contrastive, r.l_mixing
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}
