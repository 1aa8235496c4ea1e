//! Empirical risk measures over per-sample outcomes with uniform weights.
//!
//! Every evaluator sorts its input first, so results do not depend on the
//! order of the samples.

use crate::error::RiskError;

fn sorted(samples: &[f64]) -> Result<Vec<f64>, RiskError> {
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(RiskError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn mean_sorted(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_order(p: f64) -> Result<(), RiskError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(RiskError::InvalidOrder(p));
    }
    Ok(())
}

pub fn expectation(samples: &[f64]) -> Result<f64, RiskError> {
    Ok(mean_sorted(&sorted(samples)?))
}

/// Conditional value-at-risk at level `β ∈ [0, 1)`:
/// `min_t { t + mean((Y − t)⁺) / (1 − β) }`. The objective is piecewise
/// linear with kinks at the samples, so the minimum over the samples is exact.
pub fn cvar(samples: &[f64], beta: f64) -> Result<f64, RiskError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(RiskError::InvalidBeta(beta));
    }
    let v = sorted(samples)?;
    if beta == 0.0 {
        return Ok(mean_sorted(&v));
    }
    let n = v.len() as f64;
    let best = v
        .iter()
        .map(|&t| t + v.iter().map(|&y| (y - t).max(0.0)).sum::<f64>() / (n * (1.0 - beta)))
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// `mean(((Y − η)⁺)^p)`.
pub fn expected_excess(samples: &[f64], target: f64, order: f64) -> Result<f64, RiskError> {
    check_order(order)?;
    let v = sorted(samples)?;
    Ok(v.iter().map(|&y| (y - target).max(0.0).powf(order)).sum::<f64>() / v.len() as f64)
}

/// `E[Y] + (E[((Y − E[Y])⁺)^p])^{1/p}`.
pub fn mean_upper_semideviation(samples: &[f64], order: f64) -> Result<f64, RiskError> {
    check_order(order)?;
    let v = sorted(samples)?;
    let m = mean_sorted(&v);
    let dev = v.iter().map(|&y| (y - m).max(0.0).powf(order)).sum::<f64>() / v.len() as f64;
    Ok(m + dev.powf(1.0 / order))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectation_examples() {
        assert_eq!(expectation(&[3.5; 7]).unwrap(), 3.5);
        assert_eq!(expectation(&[0.0, 2.0]).unwrap(), 1.0);
        let y = [0.3, -1.2, 4.0];
        let shifted: Vec<f64> = y.iter().map(|v| v + 3.7).collect();
        assert!((expectation(&shifted).unwrap() - expectation(&y).unwrap() - 3.7).abs() < 1e-14);
        assert_eq!(expectation(&[]), Err(RiskError::Empty));
        assert_eq!(expectation(&[1.0, f64::NAN]), Err(RiskError::NonFinite));
    }

    #[test]
    fn cvar_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(cvar(&y, 0.0).unwrap(), expectation(&y).unwrap());
        assert_eq!(cvar(&y, 0.75).unwrap(), 4.0);
        assert_eq!(cvar(&y, 0.5).unwrap(), 3.5);
        for beta in [0.0, 0.3, 0.9] {
            assert!((cvar(&[2.5; 5], beta).unwrap() - 2.5).abs() < 1e-15);
        }
        assert_eq!(cvar(&y, 0.999).unwrap(), 4.0);
        assert_eq!(cvar(&y, 1.0), Err(RiskError::InvalidBeta(1.0)));
        assert_eq!(cvar(&y, -0.1), Err(RiskError::InvalidBeta(-0.1)));
    }

    #[test]
    fn cvar_dominates_expectation() {
        let y = [0.1, 5.0, -2.0, 3.3, 0.0];
        for beta in [0.1, 0.5, 0.8] {
            assert!(cvar(&y, beta).unwrap() >= expectation(&y).unwrap());
        }
    }

    #[test]
    fn excess_examples() {
        assert_eq!(expected_excess(&[0.1, 0.5, 1.0], 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(expected_excess(&[3.0], 2.0, 2.0).unwrap(), 1.0);
        assert_eq!(expected_excess(&[0.0, 4.0], 1.0, 1.0).unwrap(), 1.5);
        assert_eq!(expected_excess(&[0.0], 1.0, 0.5), Err(RiskError::InvalidOrder(0.5)));
    }

    #[test]
    fn semideviation_examples() {
        assert_eq!(mean_upper_semideviation(&[1.25; 4], 2.0).unwrap(), 1.25);
        assert_eq!(mean_upper_semideviation(&[0.0, 2.0], 1.0).unwrap(), 1.5);
        assert!(mean_upper_semideviation(&[0.0, 1.0, 5.0], 2.0).unwrap() >= 2.0);
    }
}
