mod common;

use common::{false_region_is_rectangle, ks_uniform};
use divpatch::mixing::{
    mix_pair, mix_with_mask, sample_lambda, sample_mask_block, sample_mask_random, LabelLambda,
    MixMode, MixSpec,
};
use divpatch::{rng, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn beta_one_one_is_uniform() {
    let spec = MixSpec::default();
    let mut r = rng::stream(11, &[]);
    let mut draws: Vec<f64> = (0..100_000)
        .map(|_| sample_lambda(&spec, &mut r).unwrap())
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
    let ks = ks_uniform(&mut draws);
    assert!(ks < 0.01, "{ks}");
}

#[test]
fn lambda_sequence_is_reproducible() {
    let spec = MixSpec::default();
    let draw = || {
        let mut r = rng::stream(5, &[1, 2]);
        (0..20)
            .map(|_| sample_lambda(&spec, &mut r).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn random_mask_fraction_tracks_lambda() {
    let mut r = rng::stream(3, &[]);
    for lambda in [0.1, 0.3, 0.5, 0.85] {
        let draws = 10_000;
        let total: f64 = (0..draws)
            .map(|_| {
                let m = sample_mask_random(196, lambda, &mut r);
                m.iter().filter(|&&b| b).count() as f64 / 196.0
            })
            .sum();
        let mean = total / draws as f64;
        assert!((mean - lambda).abs() < 0.01, "λ {lambda}: mean {mean}");
    }
}

#[test]
fn block_false_region_is_a_rectangle() {
    let mut r = rng::stream(4, &[]);
    for side in [1usize, 2, 5, 8, 14] {
        for _ in 0..1000 {
            let lambda: f64 = r.random();
            let mask = sample_mask_block(side, lambda, &mut r);
            assert!(false_region_is_rectangle(&mask, side), "{mask:?}");
            let expect = ((side as f64) * (1.0 - lambda).sqrt()).round() as usize;
            let falses = mask.iter().filter(|&&m| !m).count();
            assert_eq!(falses, expect.min(side).pow(2));
        }
    }
}

fn grid(seed: u64, n: usize, pdim: usize) -> Tensor<f32> {
    let mut r = rng::stream(seed, &[]);
    Tensor::from_fn([n, pdim], |_| r.random_range(-1.0f32..1.0))
}

#[test]
fn every_output_patch_comes_from_one_source() {
    let (x0, x1) = (grid(1, 64, 12), grid(2, 64, 12));
    let mut r = rng::stream(9, &[]);
    for mode in [MixMode::Random, MixMode::Block] {
        let spec = MixSpec {
            mode,
            ..MixSpec::default()
        };
        for _ in 0..200 {
            let row = mix_pair(&x0, 1, &x1, 3, 5, &spec, &mut r).unwrap();
            for i in 0..64 {
                let bits =
                    |t: &Tensor<f32>| t.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                let out = bits(&row.patches);
                let src = if row.mask[i] { bits(&x0) } else { bits(&x1) };
                assert_eq!(out, src);
                assert_eq!(row.y_patch[i], if row.mask[i] { 1 } else { 3 });
            }
            assert!((row.y_mix.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((row.y_mix[1] - row.lambda_eff).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn swapping_sources_and_negating_the_mask_is_the_same_mix(
        mask in proptest::collection::vec(any::<bool>(), 16),
        y0 in 0usize..4,
        y1 in 0usize..4,
        seed in any::<u64>(),
    ) {
        let (x0, x1) = (grid(seed, 16, 3), grid(seed ^ 1, 16, 3));
        let a = mix_with_mask(&x0, y0, &x1, y1, mask.clone(), 4, 0.5, LabelLambda::Realized).unwrap();
        let flipped: Vec<bool> = mask.iter().map(|m| !m).collect();
        let b = mix_with_mask(&x1, y1, &x0, y0, flipped, 4, 0.5, LabelLambda::Realized).unwrap();
        prop_assert_eq!(&a.patches, &b.patches);
        prop_assert_eq!(&a.y_patch, &b.y_patch);
        for (p, q) in a.y_mix.iter().zip(&b.y_mix) {
            prop_assert!((p - q).abs() < 1e-12);
        }
        prop_assert!((a.lambda_eff + b.lambda_eff - 1.0).abs() < 1e-12);
    }
}
