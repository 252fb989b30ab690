mod common;

use common::{brute_force_cosine, to_tensor};
use divpatch::metrics::patch_cosine;
use proptest::prelude::*;

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=24, 1usize..=12).prop_flat_map(|(n, d)| {
        proptest::collection::vec(
            proptest::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero row", |r| {
                r.iter().map(|v| v * v).sum::<f64>() > 1e-6
            }),
            n,
        )
    })
}

proptest! {
    #[test]
    fn matches_brute_force_pair_loop(rows in rows_strategy()) {
        let fast = patch_cosine(&to_tensor(&rows), false).unwrap();
        prop_assert!((fast - brute_force_cosine(&rows)).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn invariant_under_row_permutation(rows in rows_strategy(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        let len = shuffled.len();
        for i in (1..len).rev() {
            let j = (seed.wrapping_mul(i as u64 + 7) >> 5) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let a = patch_cosine(&to_tensor(&rows), false).unwrap();
        let b = patch_cosine(&to_tensor(&shuffled), false).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_negation_and_positive_scaling(
        rows in rows_strategy(),
        scales in proptest::collection::vec(0.01f64..100.0, 24),
        flips in proptest::collection::vec(any::<bool>(), 24),
    ) {
        let changed: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = if flips[i] { -scales[i] } else { scales[i] };
                r.iter().map(|v| v * s).collect()
            })
            .collect();
        let a = patch_cosine(&to_tensor(&rows), false).unwrap();
        let b = patch_cosine(&to_tensor(&changed), false).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn class_row_never_contributes(rows in rows_strategy(), class_row in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let d = rows[0].len();
        let mut with_class = vec![class_row[..d].to_vec()];
        with_class[0][0] += 1.0;
        with_class.extend(rows.iter().cloned());
        let a = patch_cosine(&to_tensor(&rows), false).unwrap();
        let b = patch_cosine(&to_tensor(&with_class), true).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn collapsed_rows_give_one_and_basis_rows_give_zero() {
    let same = vec![vec![0.3, -2.0, 1.0]; 5];
    assert!((patch_cosine(&to_tensor(&same), false).unwrap() - 1.0).abs() < 1e-12);
    let basis: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    assert_eq!(patch_cosine(&to_tensor(&basis), false).unwrap(), 0.0);
}
