//! The Binomial test and power limits checked against exact rational
//! arithmetic and independent formulas.

use algotest::bounds::{eval_power_bound, tilde_tau, BoundInputs};
use algotest::btest::{binom_closed_form_power, binom_test_exact_power, binomial_critical};
use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use proptest::prelude::*;

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap()
}

fn choose(m: u64, k: u64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| {
        acc * BigInt::from(m - i) / BigInt::from(i + 1)
    })
}

/// Exact `Bin(m, p)` pmf for a dyadic `p`.
fn pmf(m: u64, p: &BigRational) -> Vec<BigRational> {
    let q = BigRational::one() - p;
    (0..=m)
        .map(|k| {
            let mut v = BigRational::from_integer(choose(m, k));
            for _ in 0..k {
                v *= p;
            }
            for _ in k..m {
                v *= &q;
            }
            v
        })
        .collect()
}

/// `(k*, a*)` from the defining equation, in exact arithmetic.
fn critical(m: u64, tau: f64, alpha: f64) -> (u64, BigRational) {
    let f = pmf(m, &rat(tau));
    let a = rat(alpha);
    let mut below = BigRational::zero();
    for (k, pk) in f.iter().enumerate() {
        if &below + pk > a {
            return (k as u64, (a - below) / pk);
        }
        below += pk;
    }
    unreachable!("alpha < 1")
}

fn power(m: u64, tau: f64, alpha: f64, r: f64) -> f64 {
    let (k, a) = critical(m, tau, alpha);
    let f = pmf(m, &rat(r));
    let below: BigRational = f.iter().take(k as usize).cloned().sum();
    (below + a * &f[k as usize]).to_f64().unwrap()
}

fn dyadic(j: u32, bits: u32) -> f64 {
    j as f64 / (1u64 << bits) as f64
}

#[test]
fn critical_values_match_exact_arithmetic() {
    for m in [1, 2, 5, 17, 40, 64] {
        for tau in [0.25, 0.5, 0.75, 0.375] {
            for alpha in [0.01, 0.05, 0.1, 0.5] {
                let cv = binomial_critical(m, tau, alpha).unwrap();
                let (k, a) = critical(m, tau, alpha);
                assert_eq!(cv.k_star, k, "m={m} tau={tau} alpha={alpha}");
                assert!((cv.a_star - a.to_f64().unwrap()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn exact_power_matches_exact_arithmetic() {
    for m in [1, 3, 8, 33, 64] {
        for r in [0.0, 0.125, 0.25, 0.5, 0.625] {
            let got = binom_test_exact_power(m, 0.5, 0.05, r).unwrap();
            assert!((got - power(m, 0.5, 0.05, r)).abs() < 1e-10, "m={m} R={r}");
        }
    }
}

#[test]
fn small_sample_examples() {
    // One batch: reject only when the single loss is 0, so power at R = 0 is 2 alpha.
    let p = binom_test_exact_power(1, 0.5, 0.05, 0.0).unwrap();
    assert!((p - 0.10).abs() < 1e-12);
    // The closed form alpha ((1 - R)/(1 - tau))^m holds when alpha < (1 - tau)^m.
    for r in [0.0, 0.1, 0.3, 0.5] {
        let closed = binom_closed_form_power(3, 0.5, 0.05, r).unwrap();
        let expected = 0.05 * ((1.0 - r) / 0.5f64).powi(3);
        assert!((closed - expected).abs() < 1e-12);
        assert!((closed - binom_test_exact_power(3, 0.5, 0.05, r).unwrap()).abs() < 1e-12);
    }
    assert!((binom_closed_form_power(3, 0.5, 0.05, 0.0).unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(binom_closed_form_power(10, 0.5, 0.05, 0.0), None);
}

#[test]
fn bound_value_from_independent_formula() {
    // tau~ = 0.5 (1 + 19/100) = 0.595; bound at R = 0 is 0.05 (1 + 0.595/0.405).
    let v = eval_power_bound(&BoundInputs {
        alpha: 0.05,
        tau: 0.5,
        big_n: 100.0,
        n: 100.0,
        r: 0.0,
        r_max: 1.0,
        b: 1.0,
    })
    .unwrap();
    assert!((v - 0.05 / 0.405).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn size_is_exactly_alpha(m in 1u64..80, tau in 0.02f64..0.98, alpha in 0.001f64..0.5) {
        let size = binom_test_exact_power(m, tau, alpha, tau).unwrap();
        prop_assert!((size - alpha).abs() < 1e-10);
    }

    #[test]
    fn dyadic_power_matches_oracle(m in 1u64..=64, tj in 1u32..16, rj in 0u32..16, alpha in 0.001f64..0.5) {
        let (tau, r) = (dyadic(tj, 4), dyadic(rj, 4));
        let got = binom_test_exact_power(m, tau, alpha, r).unwrap();
        prop_assert!((got - power(m, tau, alpha, r)).abs() < 1e-9);
    }

    #[test]
    fn power_is_monotone_and_valid(m in 1u64..40, tau in 0.05f64..0.95, alpha in 0.01f64..0.3, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let p_lo = binom_test_exact_power(m, tau, alpha, lo).unwrap();
        let p_hi = binom_test_exact_power(m, tau, alpha, hi).unwrap();
        prop_assert!(p_lo + 1e-12 >= p_hi);
        if hi >= tau {
            prop_assert!(p_hi <= alpha + 1e-10);
        }
    }

    #[test]
    fn exact_power_never_beats_the_limit(
        m in 1u64..30, n in 1usize..6, tau in 0.05f64..0.95, alpha in 0.01f64..0.3, frac in 0.0f64..1.0,
    ) {
        let big_n = (m * (n as u64 + 1)) as f64;
        let r = frac * tau;
        if let Ok(bound) = eval_power_bound(&BoundInputs { alpha, tau, big_n, n: n as f64, r, r_max: 1.0, b: 1.0 }) {
            prop_assert!(binom_test_exact_power(m, tau, alpha, r).unwrap() <= bound + 1e-9);
        }
        prop_assert!(tilde_tau(tau, alpha, big_n) >= tau);
    }
}
