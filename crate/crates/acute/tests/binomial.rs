use num_bigint::BigUint;
use proptest::prelude::*;
use todsim_acute::binomial_p;

/// Exact 2 * sum_{i >= max(k, n-k)} C(n, i) / 2^n with big integers, rounded
/// to f64 through an 80-bit fixed-point quotient.
fn oracle(k: u64, n: u64) -> f64 {
    let m = k.max(n - k);
    let mut c = BigUint::from(1u32); // C(n, 0)
    let mut tail = BigUint::from(0u32);
    for i in 0..=n {
        if i >= m {
            tail += &c;
        }
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    let scaled: BigUint = (tail << 81u32) >> (n as usize); // 2 * tail / 2^n * 2^80
    let f = scaled.to_string().parse::<f64>().unwrap() / 2f64.powi(80);
    f.min(1.0)
}

#[test]
fn hand_checked_values() {
    assert_eq!(binomial_p(10, 10).unwrap(), 0.001953125);
    assert_eq!(binomial_p(5, 10).unwrap(), 1.0);
    assert!((binomial_p(180, 300).unwrap() - oracle(180, 300)).abs() < 1e-12);
    // A .80 share over 400 comparisons is far below alpha.
    assert!(binomial_p(320, 400).unwrap() < 0.05);
}

#[test]
fn invalid_counts() {
    assert!(binomial_p(11, 10).is_err());
    assert!(binomial_p(0, 0).is_err());
}

#[test]
fn log_space_branch_matches_oracle() {
    for (k, n) in [(1001, 2000), (1000, 2000), (1040, 2000), (1100, 2000), (1500, 1999), (2000, 2000), (520, 1001)] {
        let got = binomial_p(k, n).unwrap();
        let want = oracle(k, n);
        assert!((got - want).abs() < 1e-12, "k={k} n={n}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_big_integer_oracle((n, k) in (1u64..=2000).prop_flat_map(|n| (Just(n), 0..=n))) {
        let got = binomial_p(k, n).unwrap();
        let want = oracle(k, n);
        prop_assert!((got - want).abs() < 1e-12, "k={} n={}: {} vs {}", k, n, got, want);
    }

    #[test]
    fn symmetric_and_monotone((n, k) in (2u64..=1500).prop_flat_map(|n| (Just(n), 0..n / 2))) {
        let p = binomial_p(k, n).unwrap();
        prop_assert_eq!(p, binomial_p(n - k, n).unwrap());
        // Moving one step toward the centre never lowers p.
        prop_assert!(binomial_p(k + 1, n).unwrap() >= p);
    }
}
