//! Benchmark harness: the classification-to-bandit replication loop with
//! Relative-RMSE reporting, and the exact theorem-check suite.

mod bench;
mod config;
mod report;
mod theorems;

use crate::error::{OpeError, Result};

pub use bench::{run_benchmark, run_benchmark_with, BenchmarkReport, ExtraEstimator, FailedCell, ReplicationInput, ResultRow};
pub use config::{DataSource, EstimatorKind, ExperimentConfig, Propensities};
pub use report::{config_hash, git_describe, write_outputs, FIG_DR_VS_IS, FIG_SMRDR_VS_MRDR, RESULTS_HEADER};
pub use theorems::{run_theorem_suite, CheckResult, TheoremReport, TheoremSuiteConfig};

/// `(1/(J√M)) √(Σ_m (J − Ĵ_m)²)`.
pub fn relative_rmse(truth: f64, estimates: &[f64]) -> Result<f64> {
    if truth == 0.0 || !truth.is_finite() {
        return Err(OpeError::InvalidArgument(format!(
            "relative RMSE needs a finite nonzero true value, got {truth}"
        )));
    }
    if estimates.is_empty() {
        return Err(OpeError::InsufficientData("no estimates".into()));
    }
    let m = estimates.len() as f64;
    let sse: f64 = estimates.iter().map(|e| (truth - e).powi(2)).sum();
    Ok(sse.sqrt() / (truth.abs() * m.sqrt()))
}

/// Monte Carlo standard error of [`relative_rmse`] by the delta method:
/// `SE(MSE) / (2 RMSE |J|)`.
pub fn relative_rmse_se(truth: f64, estimates: &[f64]) -> Result<f64> {
    let r = relative_rmse(truth, estimates)?;
    let m = estimates.len();
    if m < 2 || r == 0.0 {
        return Ok(0.0);
    }
    let sq: Vec<f64> = estimates.iter().map(|e| (truth - e).powi(2)).collect();
    let se_mse = crate::stats::variance(&sq, true).sqrt() / (m as f64).sqrt();
    let rmse = r * truth.abs();
    Ok(se_mse / (2.0 * rmse * truth.abs()))
}

/// `RMSE(b) − RMSE(a)` in relative units with its paired Monte Carlo SE.
///
/// Both estimators must have been run on the same replications. The SE uses
/// the delta method on `u_m = e_a²/(2 R_a) − e_b²/(2 R_b)`.
pub fn paired_rmse_gap(truth: f64, a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(OpeError::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let ra = relative_rmse(truth, a)? * truth.abs();
    let rb = relative_rmse(truth, b)? * truth.abs();
    let gap = (rb - ra) / truth.abs();
    if a.len() < 2 || ra == 0.0 || rb == 0.0 {
        return Ok((gap, 0.0));
    }
    let u: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (truth - x).powi(2) / (2.0 * ra) - (truth - y).powi(2) / (2.0 * rb))
        .collect();
    let se = crate::stats::variance(&u, true).sqrt() / (a.len() as f64).sqrt() / truth.abs();
    Ok((gap, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_rmse_hand_values() {
        assert_eq!(relative_rmse(0.7, &[0.7, 0.7]).unwrap(), 0.0);
        assert!((relative_rmse(1.0, &[0.9]).unwrap() - 0.1).abs() < 1e-12);
        // sqrt(0.02) / (0.5 sqrt(2)) = 0.2
        let v = relative_rmse(0.5, &[0.4, 0.6]).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
        assert!(relative_rmse(0.0, &[1.0]).is_err());
        assert!(relative_rmse(1.0, &[]).is_err());
    }

    #[test]
    fn paired_gap_is_zero_for_identical_inputs() {
        let e = [0.4, 0.55, 0.61, 0.47];
        let (gap, se) = paired_rmse_gap(0.5, &e, &e).unwrap();
        assert_eq!(gap, 0.0);
        assert!(se.abs() < 1e-15);
        let (gap, _) = paired_rmse_gap(0.5, &[0.5, 0.5], &[0.4, 0.6]).unwrap();
        assert!((gap - 0.2).abs() < 1e-12);
    }
}
