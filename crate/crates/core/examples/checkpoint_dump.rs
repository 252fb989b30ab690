//! Save a model checkpoint and an activation dump, then read both back.
//!
//! `cargo run --release --example checkpoint_dump`

use divpatch::data::DatasetSpec;
use divpatch::metrics::{read_dump, write_dump};
use divpatch::vit::{checkpoint, ActivationStack, ModelConfig, ViTParams};

fn main() -> divpatch::Result<()> {
    let dir = std::env::temp_dir().join("divpatch-ckpt-example");
    std::fs::create_dir_all(&dir)?;
    let cfg = ModelConfig {
        image_size: 8,
        dim: 16,
        depth: 2,
        heads: 2,
        ..ModelConfig::default()
    };
    let params = ViTParams::<f32>::init(&cfg, 3)?;
    let path = dir.join("model.dpck");
    checkpoint::save(&params, &path)?;
    let back = checkpoint::load(&path)?;
    println!(
        "{} parameters, reloaded identically: {}",
        params.num_params(),
        back == params
    );

    let spec = DatasetSpec {
        image_size: 8,
        train_size: 1,
        eval_size: 1,
        ..DatasetSpec::default()
    };
    let (train, _) = spec.load(0)?;
    let patches = train.to_patches(cfg.patch_size)?;
    let inf = back.infer(&patches.patches)?;
    let layers = inf
        .layers
        .iter()
        .map(|l| l.index0(0))
        .collect::<divpatch::Result<_>>()?;
    let stack = ActivationStack { layers };
    let dump = dir.join("tokens.pdmp");
    write_dump(&stack, &dump)?;
    let read = read_dump(&dump)?;
    println!(
        "dumped {} layers of {:?}, reloaded identically: {}",
        read.layers.len(),
        read.layers[0].shape(),
        read == stack
    );
    Ok(())
}
