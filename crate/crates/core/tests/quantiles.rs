use daar::quantile::{chi_square_cdf, chi_square_quantile, normal_cdf, normal_quantile};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn normal_matches_statrs() {
    let std = Normal::standard();
    for i in 1..1000 {
        let p = i as f64 / 1000.0;
        assert!((normal_quantile(p) - std.inverse_cdf(p)).abs() < 1e-9, "p = {p}");
    }
    for p in [1e-10, 1e-6, 1e-3, 1.0 - 1e-6] {
        let want = std.inverse_cdf(p);
        assert!((normal_quantile(p) - want).abs() < 1e-8 * want.abs().max(1.0), "p = {p}");
    }
    for i in -80..=80 {
        let x = i as f64 / 10.0;
        let want = std.cdf(x);
        assert!((normal_cdf(x) - want).abs() < 1e-9 * want, "x = {x}");
    }
}

#[test]
fn chi_square_matches_statrs() {
    for df in [1.0, 2.0, 3.0, 5.0, 10.0, 30.0, 190.0] {
        let law = ChiSquared::new(df).unwrap();
        for p in [0.01, 0.05, 0.5, 0.9, 0.95, 0.99] {
            let want = law.inverse_cdf(p);
            assert!((chi_square_quantile(p, df) - want).abs() < 1e-6 * want, "df {df}, p {p}");
        }
        for x in [0.1, 1.0, df, 2.0 * df] {
            assert!((chi_square_cdf(x, df) - law.cdf(x)).abs() < 1e-10, "df {df}, x {x}");
        }
    }
}
