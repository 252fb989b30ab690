use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::DatasetSpec;
use crate::rng;
use crate::tensor::Tensor;

const SYNTH_TAG: u64 = 0x5359_4e54;

/// Example `index` of the synthetic set: an image `[channels, size, size]`
/// and its label. Deterministic in `(spec, seed, index)`.
pub fn gen_synthetic(spec: &DatasetSpec, seed: u64, index: u64) -> (Tensor<f32>, usize) {
    let k = spec.num_classes;
    let label = (index % k as u64) as usize;
    let mut rng = rng::stream(seed, &[SYNTH_TAG, index]);
    let theta = label as f64 * PI / k as f64;
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let offset = spec.class_offset * (label as f64 - (k as f64 - 1.0) / 2.0);
    let (cos, sin) = (theta.cos(), theta.sin());
    let s = spec.image_size;
    let omega = 2.0 * PI * spec.frequency;
    let image = Tensor::from_fn([spec.channels, s, s], |i| {
        let (y, x) = ((i / s) % s, i % s);
        let wave = (omega * (x as f64 * cos + y as f64 * sin) + phase).sin();
        let noise = if spec.noise_std > 0.0 {
            spec.noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        (wave + offset + noise) as f32
    });
    (image, label)
}
