use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{finite_diff_check, op_cases};

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduce an arbitrary tensor to a scalar with fixed random weights so every
/// coordinate of the upstream gradient differs.
fn weighted_sum(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let w = random(t.shape(v), &mut rng);
    let w = t.constant(w);
    let p = t.mul(v, w)?;
    Ok(t.sum(p))
}

#[test]
fn matmul_identity_and_definition() {
    let mut t = Tape::<f64>::new();
    let i2 = t.constant(Tensor::eye(2));
    let a = t.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let c = t.matmul(i2, a).unwrap();
    assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = t.constant(t64(&[1, 2], &[1.0, 2.0]));
    let col = t.constant(t64(&[2, 1], &[3.0, 4.0]));
    let d = t.matmul(r, col).unwrap();
    assert_eq!(t.value(d).shape(), &[1, 1]);
    assert_eq!(t.value(d).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::zeros([2, 3]));
    let b = t.constant(Tensor::zeros([4, 5]));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn matmul_batched_matches_per_batch_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 4, 5], &mut rng);
    let mut t = Tape::<f64>::new();
    let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
    let c = t.matmul(av, bv).unwrap();
    for bi in 0..2 {
        for i in 0..3 {
            for j in 0..5 {
                let expect: f64 = (0..4)
                    .map(|k| a.data()[bi * 12 + i * 4 + k] * b.data()[bi * 20 + k * 5 + j])
                    .sum();
                let got = t.value(c).data()[bi * 15 + i * 5 + j];
                assert!((expect - got).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let err = finite_diff_check(
        |t: &mut Tape<f64>, x| {
            let bv = t.constant(b.clone());
            let c = t.matmul(x, bv)?;
            Ok(t.sum(c))
        },
        &a,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::<f64>::new();
    let g = t.constant(Tensor::ones([3]));
    let b = t.constant(Tensor::zeros([3]));
    let x = t.constant(t64(&[3], &[1.0, 1.0, 1.0]));
    let y = t.layer_norm(x, g, b, 1e-6).unwrap();
    assert!(t.value(y).data().iter().all(|v| v.abs() < 1e-12));

    let g2 = t.constant(Tensor::ones([2]));
    let b2 = t.constant(Tensor::zeros([2]));
    let x2 = t.constant(t64(&[2], &[-1.0, 1.0]));
    let y2 = t.layer_norm(x2, g2, b2, 1e-6).unwrap();
    let d = t.value(y2).data();
    assert!(
        (d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5,
        "{d:?}"
    );
}

#[test]
fn layer_norm_rejects_empty_axis() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::zeros([2, 0]));
    let g = t.constant(Tensor::zeros([0]));
    let b = t.constant(Tensor::zeros([0]));
    assert!(matches!(
        t.layer_norm(x, g, b, 1e-6),
        Err(Error::EmptyAxis { .. })
    ));
}

#[test]
fn softmax_examples() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::new([2], vec![0.0, 0.0]).unwrap());
    let y = t.softmax(x, 0).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);

    let big = t.constant(Tensor::new([2], vec![1000.0, 0.0]).unwrap());
    let y = t.softmax(big, 0).unwrap();
    let d = t.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-6 && d[1].abs() < 1e-6);
    let ly = t.log_softmax(big, 0).unwrap();
    assert!(t.value(ly).data().iter().all(|v| v.is_finite()));
}

#[test]
fn elementwise_examples() {
    let mut t = Tape::<f32>::new();
    let z = t.constant(Tensor::zeros([1]));
    let g = t.gelu(z);
    assert_eq!(t.value(g).data(), &[0.0]);

    let v = t.constant(Tensor::new([2], vec![2.0, 4.0]).unwrap());
    let m = t.mean(v).unwrap();
    assert_eq!(t.value(m).item().unwrap(), 3.0);
    let ma = t.mean_axis(v, 0, false).unwrap();
    assert_eq!(t.value(ma).data(), &[3.0]);
}

#[test]
fn slice_concat_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 7, 2], &mut rng);
    let mut t = Tape::<f64>::new();
    let v = t.constant(x.clone());
    for k in 0..=7 {
        let lo = t.slice(v, 1, 0..k).unwrap();
        let hi = t.slice(v, 1, k..7).unwrap();
        let back = t.concat(&[lo, hi], 1).unwrap();
        assert_eq!(t.value(back), &x);
    }
    assert!(matches!(
        t.slice(v, 1, 3..8),
        Err(Error::OutOfBounds { .. })
    ));
    assert!(matches!(t.slice(v, 3, 0..1), Err(Error::BadAxis { .. })));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::<f32>::new();
    let x = t.param(Tensor::from_fn([2, 3, 4], |i| i as f32));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    assert_eq!(t.grad(s).unwrap().data(), &[1.0]);
}

#[test]
fn backward_of_square() {
    let mut t = Tape::<f32>::new();
    let x = t.param(Tensor::new([1], vec![3.0]).unwrap());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn shared_subexpression_accumulates_both_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&[5], &mut rng);
    let f = |t: &mut Tape<f64>, v: Var| {
        let e = t.tanh(v);
        let a = t.mul(e, v)?;
        let b = t.exp(e);
        let c = t.add(a, b)?;
        weighted_sum(t, c, 1)
    };
    let err = finite_diff_check(f, &x, 1e-3).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn backward_rejects_non_scalar_root_and_second_call() {
    let mut t = Tape::<f32>::new();
    let x = t.param(Tensor::ones([3]));
    assert!(matches!(t.backward(x), Err(Error::NonScalarRoot(_))));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(Error::BackwardTwice)));
}

#[test]
fn unreachable_and_frozen_leaves_get_no_grad() {
    let mut t = Tape::<f32>::new();
    let x = t.param(Tensor::ones([2]));
    let unused = t.param(Tensor::ones([2]));
    let c = t.constant(Tensor::ones([2]));
    let d = t.detach(x);
    let y = t.mul(x, c).unwrap();
    let y = t.add(y, d).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert!(t.grad(x).is_some());
    assert!(t.grad(unused).is_none());
    assert!(t.grad(c).is_none());
    assert!(t.grad(d).is_none());
}

#[test]
fn every_op_passes_finite_differences_over_20_seeds() {
    for seed in 0..20 {
        for case in op_cases(seed) {
            let err = finite_diff_check(&*case.f, &case.input, 1e-3).unwrap();
            assert!(err < 1e-4, "op {} seed {seed}: rel err {err}", case.name);
        }
    }
}

#[test]
fn same_inputs_give_bit_identical_values_and_grads() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::<f32>::new();
        let x = t.param(Tensor::from_fn([4, 6], |_| rng.random_range(-1.0..1.0)));
        let w = t.param(Tensor::from_fn([6, 3], |_| rng.random_range(-1.0..1.0)));
        let h = t.matmul(x, w).unwrap();
        let h = t.gelu(h);
        let s = t.log_softmax(h, 1).unwrap();
        let l = t.sum(s);
        t.backward(l).unwrap();
        (
            t.value(l).clone(),
            t.grad(x).unwrap().clone(),
            t.grad(w).unwrap().clone(),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data()[0].to_bits(), b.0.data()[0].to_bits());
    assert!(a
        .1
        .data()
        .iter()
        .zip(b.1.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a
        .2
        .data()
        .iter()
        .zip(b.2.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in proptest::collection::vec(-20.0f64..20.0, 1..12),
            c in -50.0f64..50.0,
        ) {
            let n = xs.len();
            let mut t = Tape::<f64>::new();
            let x = t.constant(Tensor::new([n], xs.clone()).unwrap());
            let shifted = t.constant(Tensor::new([n], xs.iter().map(|v| v + c).collect()).unwrap());
            let a = t.softmax(x, 0).unwrap();
            let b = t.softmax(shifted, 0).unwrap();
            let total: f64 = t.value(a).data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(t.value(a).max_abs_diff(t.value(b)) < 1e-6);
        }
    }
}
