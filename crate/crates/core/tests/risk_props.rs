use proptest::prelude::*;
use shellopt::risk::{cvar, expectation, expected_excess, mean_upper_semideviation};
use shellopt::RiskError;

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, 1..64)
}

fn tol(a: f64, b: f64) -> f64 {
    1e-9 * (1.0 + a.abs() + b.abs())
}

proptest! {
    #[test]
    fn cvar_lies_between_mean_and_max(y in samples(), beta in 0.0..0.99f64) {
        let c = cvar(&y, beta).unwrap();
        let mean = expectation(&y).unwrap();
        let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(c >= mean - tol(c, mean));
        prop_assert!(c <= max + tol(c, max));
    }

    #[test]
    fn cvar_is_nondecreasing_in_beta(y in samples(), a in 0.0..0.99f64, b in 0.0..0.99f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (cl, ch) = (cvar(&y, lo).unwrap(), cvar(&y, hi).unwrap());
        prop_assert!(cl <= ch + tol(cl, ch));
    }

    #[test]
    fn cvar_matches_tail_average_on_exact_quantiles(mut y in prop::collection::vec(-1e3..1e3f64, 10..=10)) {
        // with ten samples and beta = 0.7 the tail is exactly the three largest
        y.sort_by(f64::total_cmp);
        let tail = (y[7] + y[8] + y[9]) / 3.0;
        let c = cvar(&y, 0.7).unwrap();
        prop_assert!((c - tail).abs() <= tol(c, tail));
    }

    #[test]
    fn excess_and_semideviation_are_nonnegative_and_dominate(y in samples(), target in -1e3..1e3f64, p in 1.0..4.0f64) {
        prop_assert!(expected_excess(&y, target, p).unwrap() >= 0.0);
        let mean = expectation(&y).unwrap();
        let sd = mean_upper_semideviation(&y, p).unwrap();
        prop_assert!(sd >= mean - tol(sd, mean));
    }

    #[test]
    fn constant_samples_have_no_risk_premium(c in -1e3..1e3f64, n in 1usize..32, beta in 0.0..0.99f64) {
        let y = vec![c; n];
        prop_assert!((expectation(&y).unwrap() - c).abs() <= tol(c, c));
        prop_assert!((cvar(&y, beta).unwrap() - c).abs() <= tol(c, c));
        prop_assert!((mean_upper_semideviation(&y, 2.0).unwrap() - c).abs() <= tol(c, c));
    }
}

#[test]
fn invalid_arguments_are_rejected() {
    assert!(matches!(expectation(&[]), Err(RiskError::Empty)));
    assert!(matches!(cvar(&[1.0], 1.0), Err(RiskError::InvalidBeta(_))));
    assert!(matches!(cvar(&[f64::NAN], 0.5), Err(RiskError::NonFinite)));
    assert!(matches!(expected_excess(&[1.0], 0.0, 0.5), Err(RiskError::InvalidOrder(_))));
}
