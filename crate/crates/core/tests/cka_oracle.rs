mod common;

use common::*;
use driftlens::cka::{
    batch_ranges, cka_map, cka_pair, gram_linear, hsic_biased, hsic_unbiased, CkaConfig, Estimator,
};
use driftlens::tensorio::ActivationSet;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn unbiased_hsic_equals_quadruple_u_statistic() {
    for n in 4..=8 {
        for seed in 0..20 {
            let x = gaussian(100 * n as u64 + seed, n, 3);
            let y = gaussian(7000 + 100 * n as u64 + seed, n, 5);
            let got = hsic_unbiased(&gram_linear(&x).unwrap(), &gram_linear(&y).unwrap()).unwrap();
            let want = hsic_unbiased_quadruples(&x, &y);
            assert!(near(got, want, 1e-10), "n={n} seed={seed}: {got} vs {want}");
        }
    }
}

#[test]
fn unbiased_hsic_small_integer_case() {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0, -1.0, 3.0]);
    let y = DMatrix::from_row_slice(4, 1, &[2.0, -1.0, 0.0, 1.0]);
    let got = hsic_unbiased(&gram_linear(&x).unwrap(), &gram_linear(&y).unwrap()).unwrap();
    assert!(near(got, hsic_unbiased_quadruples(&x, &y), 1e-12));
}

#[test]
fn biased_hsic_equals_explicit_centering() {
    for seed in 0..60u64 {
        let n = 2 + (seed as usize % 31);
        let x = gaussian(seed, n, 1 + seed as usize % 7);
        let y = gaussian(seed + 500, n, 2 + seed as usize % 5);
        let got = hsic_biased(&gram_linear(&x).unwrap(), &gram_linear(&y).unwrap()).unwrap();
        assert!(near(got, hsic_biased_hkh(&x, &y), 1e-10), "seed {seed}");
    }
}

#[test]
fn cka_pair_matches_both_oracles() {
    for seed in 0..40u64 {
        let n = 4 + seed as usize % 5;
        let x = gaussian(seed, n, 4);
        let y = gaussian(seed + 99, n, 2);
        for (est, oracle) in [
            (Estimator::Biased, cka_from(hsic_biased_hkh, &x, &y)),
            (Estimator::Unbiased, cka_from(hsic_unbiased_quadruples, &x, &y)),
        ] {
            let v = cka_pair(&x, &y, est).unwrap();
            match oracle {
                Some(want) => assert!((v.value - want).abs() < 1e-10 && !v.degenerate),
                None => assert!(v.degenerate && v.value == 0.0),
            }
        }
    }
}

#[test]
fn minibatches_average_hsic_terms_and_drop_the_tail() {
    let n = 50;
    let a = gaussian_set("a", 3, n, &[3, 5]);
    let b = gaussian_set("b", 4, n, &[4]);
    let ranges = batch_ranges(n, 16, Estimator::Unbiased.min_samples());
    assert_eq!(ranges, vec![(0, 16), (16, 32), (32, 48)]);
    let map = cka_map(
        &a,
        &b,
        CkaConfig {
            estimator: Estimator::Unbiased,
            batch_size: 16,
        },
    )
    .unwrap();
    let mean_hsic = |p: &DMatrix<f64>, q: &DMatrix<f64>| {
        ranges
            .iter()
            .map(|&(s, e)| hsic_unbiased_quadruples(&p.rows(s, e - s).into_owned(), &q.rows(s, e - s).into_owned()))
            .sum::<f64>()
            / ranges.len() as f64
    };
    let y = as_matrix(&b.layers()[0]);
    for (i, l) in a.layers().iter().enumerate() {
        let x = as_matrix(l);
        let want = cka_from(mean_hsic, &x, &y).unwrap();
        assert!((map.get(i, 0) - want).abs() < 1e-10);
    }
    assert_eq!(map.batches, 3);
}

fn pair_strategy() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 8usize..40, 1usize..8, 1usize..8)
}

fn both() -> [Estimator; 2] {
    [Estimator::Biased, Estimator::Unbiased]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_similarity_is_one((seed, n, p, _) in pair_strategy()) {
        let x = gaussian(seed, n, p);
        for est in both() {
            prop_assert!((cka_pair(&x, &x, est).unwrap().value - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_in_arguments((seed, n, p, q) in pair_strategy()) {
        let x = gaussian(seed, n, p);
        let y = gaussian(seed.wrapping_add(1), n, q);
        for est in both() {
            let xy = cka_pair(&x, &y, est).unwrap().value;
            let yx = cka_pair(&y, &x, est).unwrap().value;
            prop_assert!((xy - yx).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_scaling_is_invisible((seed, n, p, q) in pair_strategy(), c in 1e-3f64..1e3) {
        let x = gaussian(seed, n, p);
        let y = gaussian(seed.wrapping_add(1), n, q);
        for est in both() {
            let base = cka_pair(&x, &y, est).unwrap().value;
            let scaled = cka_pair(&(&x * c), &y, est).unwrap().value;
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }

    #[test]
    fn biased_values_lie_in_unit_interval((seed, n, p, q) in pair_strategy()) {
        let x = gaussian(seed, n, p);
        let y = gaussian(seed.wrapping_add(1), n, q);
        let v = cka_pair(&x, &y, Estimator::Biased).unwrap().value;
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn map_transpose_symmetry(seed in any::<u64>(), n in 8usize..60, batch in 4usize..64) {
        let a: ActivationSet = gaussian_set("a", seed % 1000, n, &[3, 6, 2]);
        let b: ActivationSet = gaussian_set("b", seed % 1000 + 1000, n, &[5, 4]);
        for est in both() {
            let cfg = CkaConfig { estimator: est, batch_size: batch };
            let ab = cka_map(&a, &b, cfg).unwrap();
            let ba = cka_map(&b, &a, cfg).unwrap().transpose();
            prop_assert_eq!(ab.dims(), ba.dims());
            for (u, v) in ab.values().iter().zip(ba.values()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
