use proptest::prelude::*;
use rdbc::gaussianity::{self, Source};
use rdbc::rng::{self, seeded};
use rdbc::stats::Mode;
use rdbc::{whitening, FeatureMatrix};

fn laplace(r: &mut rdbc::rng::Rng) -> f64 {
    let u = rng::open01(r) - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Rows `A s + b` for independent Laplace, exponential and Gaussian sources.
fn mixed_sources(n: usize, a: &[f64; 9], b: &[f64; 3], seed: u64) -> FeatureMatrix {
    let mut r = seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let s = [laplace(&mut r), Source::Exponential.draw(&mut r), rng::normal(&mut r)];
            (0..3).map(|i| b[i] + (0..3).map(|j| a[i * 3 + j] * s[j]).sum::<f64>()).collect()
        })
        .collect();
    FeatureMatrix::real(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagonal_whitening_keeps_per_dim_moments(
        seed in any::<u64>(),
        a in prop::array::uniform9(-3.0f64..3.0),
        b in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let mut a = a;
        for i in 0..3 {
            a[i * 4] += 4.0f64.copysign(a[i * 4]);
        }
        let x = mixed_sources(500, &a, &b, seed);
        let before = gaussianity::moment_report(&x).unwrap();
        let t = whitening::fixed_transform(&x, Mode::Diagonal, 0.0).unwrap();
        let after = gaussianity::moment_report(&whitening::apply(&t, &x).unwrap()).unwrap();
        for d in 0..3 {
            prop_assert!((before.per_dim_skewness[d] - after.per_dim_skewness[d]).abs() < 1e-9);
            prop_assert!((before.per_dim_excess_kurtosis[d] - after.per_dim_excess_kurtosis[d]).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_is_zero_only_for_zero_moments(skew in prop::collection::vec(-2.0f64..2.0, 1..6)) {
        // the score is a sum of squares, so it vanishes exactly when every moment does
        let xs: Vec<f64> = skew.iter().flat_map(|&s| [s - 1.0, s, s + 1.0, s, 2.0 * s]).collect();
        let x = FeatureMatrix::new(1, xs, vec![rdbc::Label::Real; skew.len() * 5], "p").unwrap();
        let rep = gaussianity::moment_report(&x).unwrap();
        let all_zero = rep.per_dim_skewness.iter().chain(&rep.per_dim_excess_kurtosis).all(|m| *m == 0.0);
        prop_assert_eq!(rep.aggregate_score == 0.0, all_zero);
    }
}

#[test]
fn full_whitening_of_gaussian_data_keeps_moments_near_zero() {
    let mut r = seeded(1);
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let g: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
            vec![3.0 + 2.0 * g[0], g[0] + g[1], -1.0 + 0.5 * g[2] - g[1], g[3] + 0.3 * g[0]]
        })
        .collect();
    let x = FeatureMatrix::real(&rows).unwrap();
    let t = whitening::fixed_transform(&x, Mode::Full, 1e-6).unwrap();
    let rep = gaussianity::moment_report(&whitening::apply(&t, &x).unwrap()).unwrap();
    // standard errors are about 0.025 (skewness) and 0.05 (kurtosis) at n = 10,000
    assert!(rep.per_dim_skewness.iter().all(|s| s.abs() < 0.1), "{rep:?}");
    assert!(rep.per_dim_excess_kurtosis.iter().all(|k| k.abs() < 0.2), "{rep:?}");
}

#[test]
fn clt_moments_shrink_with_batch_size() {
    let trials = 10_000;
    let se_skew = (6.0 / trials as f64).sqrt();
    let se_kurt = (24.0 / trials as f64).sqrt();
    for source in [Source::Uniform, Source::Exponential, Source::Bernoulli] {
        let reports: Vec<_> = [4, 16, 64]
            .iter()
            .enumerate()
            .map(|(i, &n)| gaussianity::clt_probe(source, n, trials, &mut seeded(100 + i as u64)).unwrap())
            .collect();
        for pair in reports.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            assert!(b.per_dim_skewness[0].abs() <= a.per_dim_skewness[0].abs() + 2.0 * se_skew, "{source}");
            assert!(
                b.per_dim_excess_kurtosis[0].abs() <= a.per_dim_excess_kurtosis[0].abs() + 2.0 * se_kurt,
                "{source}"
            );
        }
        // a mean of N draws has moments (γ₁/√N, γ₂/N); at N = 4 the estimators
        // are noisier than the Gaussian standard errors, hence the wide bands
        let (g1, g2) = source.moments();
        let r4 = &reports[0];
        assert!((r4.per_dim_skewness[0] - g1 / 2.0).abs() < 0.2, "{source}");
        assert!((r4.per_dim_excess_kurtosis[0] - g2 / 4.0).abs() < 0.8, "{source}");
    }
}
