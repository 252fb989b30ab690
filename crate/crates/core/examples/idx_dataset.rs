//! Write a small IDX image/label pair, read it back, and batch it.
//!
//! `cargo run --release --example idx_dataset`

use divpatch::data::{batches, encode_idx_images, encode_idx_labels, read_idx};

fn main() -> divpatch::Result<()> {
    let dir = std::env::temp_dir().join("divpatch-idx-example");
    std::fs::create_dir_all(&dir)?;
    let (n, side) = (6, 4);
    let pixels: Vec<u8> = (0..n * side * side).map(|i| (i * 7 % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    let (img, lbl) = (dir.join("images.idx"), dir.join("labels.idx"));
    std::fs::write(&img, encode_idx_images(&pixels, n, side, side)?)?;
    std::fs::write(&lbl, encode_idx_labels(&labels))?;

    let data = read_idx(&img, &lbl, 3)?;
    println!(
        "{} images of shape {:?}",
        data.len(),
        &data.images.shape()[1..]
    );
    println!(
        "first row, scaled to [0, 1]: {:?}",
        &data.images.data()[..side]
    );
    let set = data.to_patches(2)?;
    for (i, b) in batches(&set, 2, 0, 0)?.enumerate() {
        println!("batch {i}: examples {:?} labels {:?}", b.indices, b.labels);
    }
    Ok(())
}
