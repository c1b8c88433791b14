//! Survey statistics against values frozen from a 60-digit mpmath run.

use csi_core::survey::{
    bonferroni_ci, bonferroni_z_star, normal_cdf, normal_quantile, proportion_z_test,
    proportion_z_test_with, Alternative,
};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Oracle {
    cases: Vec<Case>,
    normal_cdf: Vec<CdfPoint>,
    normal_quantile: Vec<QuantilePoint>,
}

#[derive(Deserialize)]
struct Case {
    successes: u64,
    n: u64,
    z: f64,
    p_two_sided: f64,
    p_greater: f64,
    intervals: Vec<Interval>,
}

#[derive(Deserialize)]
struct Interval {
    family_alpha: f64,
    tests: usize,
    z_star: f64,
    low: f64,
    high: f64,
}

#[derive(Deserialize)]
struct CdfPoint {
    x: String,
    cdf: f64,
}

#[derive(Deserialize)]
struct QuantilePoint {
    p: String,
    quantile: f64,
}

fn oracle() -> Oracle {
    serde_json::from_str(include_str!("fixtures/survey_oracle.json")).unwrap()
}

fn close(a: f64, b: f64, abs: f64, rel: f64) -> bool {
    (a - b).abs() <= abs.max(rel * b.abs())
}

#[test]
fn z_and_p_values_match_oracle() {
    for c in oracle().cases {
        let two = proportion_z_test(c.successes, c.n, 0.5).unwrap();
        let one = proportion_z_test_with(c.successes, c.n, 0.5, Alternative::Greater).unwrap();
        assert!(close(two.z, c.z, 1e-12, 1e-12), "z {} vs {}", two.z, c.z);
        assert!(
            (two.p_value - c.p_two_sided).abs() < 1e-12,
            "{}/{}",
            c.successes,
            c.n
        );
        assert!(
            close(two.p_value, c.p_two_sided, 0.0, 1e-9),
            "{}/{}",
            c.successes,
            c.n
        );
        assert!((one.p_value - c.p_greater).abs() < 1e-12);
        assert!(close(one.p_value, c.p_greater, 1e-300, 1e-9));
    }
}

#[test]
fn intervals_match_oracle() {
    for c in oracle().cases {
        for i in c.intervals {
            let z_star = bonferroni_z_star(i.family_alpha, i.tests).unwrap();
            assert!(close(z_star, i.z_star, 0.0, 1e-12));
            let (lo, hi) = bonferroni_ci(c.successes, c.n, i.family_alpha, i.tests).unwrap();
            assert!(
                (lo - i.low).abs() < 1e-9 && (hi - i.high).abs() < 1e-9,
                "{}/{}",
                c.successes,
                c.n
            );
        }
    }
}

#[test]
fn normal_functions_match_oracle() {
    let o = oracle();
    for pt in o.normal_cdf {
        let x: f64 = pt.x.parse().unwrap();
        assert!(close(normal_cdf(x), pt.cdf, 1e-300, 1e-12), "cdf({x})");
    }
    for pt in o.normal_quantile {
        let p: f64 = pt.p.parse().unwrap();
        assert!(
            close(normal_quantile(p), pt.quantile, 1e-15, 1e-12),
            "quantile({p})"
        );
    }
}

#[test]
fn significance_is_monotone_in_successes() {
    let alpha = 0.01 / 7.0;
    for n in 1..=200u64 {
        let sig: Vec<bool> = (0..=n)
            .map(|k| {
                proportion_z_test_with(k, n, 0.5, Alternative::Greater)
                    .unwrap()
                    .p_value
                    < alpha
            })
            .collect();
        // Once the one-sided test turns significant it stays significant.
        assert!(sig.windows(2).all(|w| !w[0] || w[1]), "n = {n}");
        // Two-sided: significant set is the two tails, never an interior island.
        let two: Vec<bool> = (0..=n)
            .map(|k| proportion_z_test(k, n, 0.5).unwrap().p_value < alpha)
            .collect();
        let upper = &two[(n as usize).div_ceil(2)..];
        assert!(upper.windows(2).all(|w| !w[0] || w[1]), "n = {n}");
    }
}

proptest! {
    #[test]
    fn two_sided_p_is_symmetric(n in 1u64..2000, frac in 0.0f64..=1.0) {
        let k = (frac * n as f64).floor() as u64;
        let a = proportion_z_test(k, n, 0.5).unwrap().p_value;
        let b = proportion_z_test(n - k, n, 0.5).unwrap().p_value;
        prop_assert!((a - b).abs() <= 1e-15 * a.max(b).max(1e-300));
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn interval_shrinks_with_n(num in 1u64..20, den in 2u64..20, scale in 1u64..40) {
        prop_assume!(num < den);
        let (n1, n2) = (den * scale, den * scale * 2);
        let (a, b) = bonferroni_ci(num * scale, n1, 0.01, 7).unwrap();
        let (c, d) = bonferroni_ci(num * scale * 2, n2, 0.01, 7).unwrap();
        // Clamping at 0 or 1 can only keep the widths equal.
        if a > 0.0 && b < 1.0 {
            prop_assert!(d - c < b - a);
        } else {
            prop_assert!(d - c <= b - a);
        }
        let p = num as f64 / den as f64;
        prop_assert!(a <= p && p <= b);
    }
}
