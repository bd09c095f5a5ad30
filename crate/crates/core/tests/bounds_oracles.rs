//! Independent oracles for the bound calculus: exact rational arithmetic for
//! the Beta-pdf constant at small N, and a Monte-Carlo check of the
//! binomial-tail calibration correction through the Beta coverage law.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use pbconf_core::bounds::{kl_budget, log_b_constant, vovk_2a_alpha_hat, vovk_2b_alpha_hat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

fn big_factorial(n: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 2..=n {
        acc *= i;
    }
    acc
}

/// B(N) = a^{k-1} (1-a)^{N-k} N! / ((k-1)!(N-k)!) with a = (k-1)/(N-1),
/// evaluated exactly over the rationals.
fn b_constant_rational(k: u64, n: u64) -> BigRational {
    let a = BigRational::new(BigInt::from(k - 1), BigInt::from(n - 1));
    let one = BigRational::one();
    let mut value = BigRational::new(
        big_factorial(n),
        big_factorial(k - 1) * big_factorial(n - k),
    );
    for _ in 0..(k - 1) {
        value *= a.clone();
    }
    for _ in 0..(n - k) {
        value *= one.clone() - a.clone();
    }
    value
}

#[test]
fn log_b_matches_exact_rational_arithmetic_small_n() {
    for n in 3u64..=30 {
        for k in 1..=n {
            // Pick alpha_hat in the middle of the band that floors to k.
            let alpha_hat = (k as f64 + 0.5) / (n as f64 + 1.0);
            let got = log_b_constant(alpha_hat, n as usize).unwrap();
            let exact = b_constant_rational(k, n);
            let want = exact.to_f64().expect("finite").ln();
            assert!(
                (got - want).abs() <= 1e-10,
                "N={n} k={k}: got {got}, exact {want}"
            );
        }
    }
}

/// Conditional miscoverage at empirical rate alpha_hat follows
/// Beta(k, N+1-k) with k = floor((N+1) alpha_hat). The largest alpha_hat
/// accepted by the binomial-tail correction must keep the fraction of
/// calibration draws whose conditional miscoverage exceeds alpha below delta,
/// and the next k up must not.
#[test]
fn vovk_2b_monte_carlo_beta_law() {
    let (alpha, delta, n) = (0.1, 0.05, 1000usize);
    let alpha_hat = vovk_2b_alpha_hat(alpha, delta, n).unwrap();
    let k = (((n + 1) as f64) * alpha_hat).floor();

    let mut rng = ChaCha8Rng::seed_from_u64(72_012);
    let trials = 100_000;

    let law = Beta::new(k, (n + 1) as f64 - k).unwrap();
    let exceed = (0..trials)
        .filter(|_| law.sample(&mut rng) > alpha)
        .count() as f64
        / trials as f64;
    // Three MC standard errors of slack on top of delta.
    let se = (delta * (1.0 - delta) / trials as f64).sqrt();
    assert!(
        exceed <= delta + 3.0 * se,
        "exceed rate {exceed} above delta {delta}"
    );

    // Maximality: one step up in k breaks the guarantee.
    let law_up = Beta::new(k + 1.0, n as f64 - k).unwrap();
    let exceed_up = (0..trials)
        .filter(|_| law_up.sample(&mut rng) > alpha)
        .count() as f64
        / trials as f64;
    assert!(
        exceed_up > delta,
        "k+1 still satisfies the tail bound: {exceed_up}"
    );
}

#[test]
fn budget_root_brackets_between_vovk_bounds() {
    // At the Vovk 2b level the budget goes negative (the gap between the
    // PAC-Bayes analysis and the tighter binomial-tail bound), while at 2a
    // it is nonnegative or barely below.
    for &n in &[1000usize, 10000, 100000] {
        let a2b = vovk_2b_alpha_hat(0.1, 0.05, n).unwrap();
        let b_at_2b = kl_budget(0.1, a2b, 0.05, n).unwrap();
        assert!(b_at_2b < 0.0, "n={n}: budget {b_at_2b} at 2b level {a2b}");

        let a2a = vovk_2a_alpha_hat(0.1, 0.05, n).unwrap();
        assert!(a2b > a2a);
    }
}
