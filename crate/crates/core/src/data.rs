//! Logged bandit data: contexts, samples and stratified datasets.

use std::sync::Arc;

use crate::error::{OpeError, Result};

/// A context: an integer id plus an optional feature vector.
///
/// Finite environments index contexts by `id` so oracles can enumerate them;
/// feature-based models read `features`. Features are shared, so cloning a
/// context is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub id: usize,
    pub features: Arc<[f64]>,
}

impl Context {
    pub fn new(id: usize, features: Vec<f64>) -> Self {
        Self {
            id,
            features: features.into(),
        }
    }

    /// A context with no features.
    pub fn bare(id: usize) -> Self {
        Self {
            id,
            features: Arc::from(Vec::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// One logged observation `(k, s, a, r)`. `logger` is zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedSample {
    pub logger: usize,
    pub context: Context,
    pub action: usize,
    pub reward: f64,
}

/// K strata of logged samples with fixed sizes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StratifiedDataset {
    strata: Vec<Vec<LoggedSample>>,
}

impl StratifiedDataset {
    /// Builds a dataset, checking that every sample in stratum `k` carries logger id `k`.
    pub fn new(strata: Vec<Vec<LoggedSample>>) -> Result<Self> {
        for (k, stratum) in strata.iter().enumerate() {
            if let Some(bad) = stratum.iter().find(|s| s.logger != k) {
                return Err(OpeError::InvalidArgument(format!(
                    "sample with logger id {} found in stratum {k}",
                    bad.logger
                )));
            }
            if let Some(bad) = stratum.iter().find(|s| !s.reward.is_finite()) {
                return Err(OpeError::NonFinite(format!("reward {}", bad.reward)));
            }
        }
        Ok(Self { strata })
    }

    /// Groups a flat list of samples by their logger id into `num_strata` strata.
    pub fn from_samples(num_strata: usize, samples: Vec<LoggedSample>) -> Result<Self> {
        let mut strata = vec![Vec::new(); num_strata];
        for s in samples {
            if s.logger >= num_strata {
                return Err(OpeError::InvalidArgument(format!(
                    "logger id {} out of range for {num_strata} strata",
                    s.logger
                )));
            }
            strata[s.logger].push(s);
        }
        Self::new(strata)
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn stratum(&self, k: usize) -> &[LoggedSample] {
        &self.strata[k]
    }

    pub fn strata(&self) -> &[Vec<LoggedSample>] {
        &self.strata
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.strata.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.strata.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stratum proportions `n_k / n`.
    pub fn proportions(&self) -> Vec<f64> {
        proportions(&self.sizes())
    }

    /// All samples, stratum by stratum.
    pub fn iter(&self) -> impl Iterator<Item = &LoggedSample> {
        self.strata.iter().flatten()
    }

    /// Feature dimension of the first sample, if any.
    pub fn dim(&self) -> Option<usize> {
        self.iter().next().map(|s| s.context.dim())
    }

    /// Keeps, in each stratum, only the samples at the given indices.
    pub fn select(&self, indices: &[Vec<usize>]) -> Self {
        let strata = self
            .strata
            .iter()
            .zip(indices)
            .map(|(stratum, idx)| idx.iter().map(|&i| stratum[i].clone()).collect())
            .collect();
        Self { strata }
    }
}

/// `n_k / n`; all zeros when `n = 0`.
pub fn proportions(sizes: &[usize]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0.0; sizes.len()];
    }
    sizes.iter().map(|&nk| nk as f64 / n as f64).collect()
}

/// Checks that `rho` lies on the probability simplex within `1e-9`.
pub fn check_simplex(rho: &[f64]) -> Result<()> {
    let sum: f64 = rho.iter().sum();
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if rho.is_empty() || (sum - 1.0).abs() > 1e-9 || min < -1e-9 || !sum.is_finite() {
        return Err(OpeError::OffSimplex { sum, min });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(k: usize) -> LoggedSample {
        LoggedSample {
            logger: k,
            context: Context::bare(0),
            action: 0,
            reward: 1.0,
        }
    }

    #[test]
    fn rejects_mislabelled_samples() {
        assert!(StratifiedDataset::new(vec![vec![sample(1)]]).is_err());
        let d = StratifiedDataset::from_samples(2, vec![sample(1), sample(0), sample(1)]).unwrap();
        assert_eq!(d.sizes(), vec![1, 2]);
        assert_eq!(d.len(), 3);
        let rho = d.proportions();
        assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simplex_check() {
        assert!(check_simplex(&[0.25, 0.75]).is_ok());
        assert!(check_simplex(&[0.5, 0.6]).is_err());
        assert!(check_simplex(&[1.1, -0.1]).is_err());
        assert!(check_simplex(&[]).is_err());
    }
}
