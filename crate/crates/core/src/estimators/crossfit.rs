//! Cross-fitting: estimate nuisances on `U_z`, evaluate `Γ` on `L_z`.

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::data::StratifiedDataset;
use crate::error::{OpeError, Result};
use crate::policy::Policy;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::stats::variance;

use super::is::{precision_weights, PwConfig};
use super::{
    gamma_scores, gamma_sum, ControlVariate, FlooredInverse, InverseMarginal, ScaledInverseLogger,
    WeightFunction,
};

/// Fitted `(ĥ, ĝ)` for one fold.
#[derive(Clone)]
pub struct Nuisance {
    pub weight: Arc<dyn WeightFunction>,
    pub control: Arc<dyn ControlVariate>,
}

/// Builds `(ĥ^(z), ĝ^(z))` from the training part `U_z`.
///
/// `eval_sizes` are the stratum sizes of the held-out part `L_z`; weight
/// functions that depend on stratum sizes must use them so that the weight
/// constraint holds on the data they are evaluated on.
pub trait NuisanceFitter: Send + Sync {
    fn fit(&self, train: &StratifiedDataset, eval_sizes: &[usize]) -> Result<Nuisance>;
}

impl<F> NuisanceFitter for F
where
    F: Fn(&StratifiedDataset, &[usize]) -> Result<Nuisance> + Send + Sync,
{
    fn fit(&self, train: &StratifiedDataset, eval_sizes: &[usize]) -> Result<Nuisance> {
        self(train, eval_sizes)
    }
}

/// Fits a reward model `q̂` on training data.
pub trait QFitter: Send + Sync {
    fn fit_q(&self, train: &StratifiedDataset) -> Result<Arc<dyn ControlVariate>>;
}

/// Fits a behavior-policy estimate `π̂_*` on training data.
pub trait BehaviorFitter: Send + Sync {
    fn fit_behavior(&self, train: &StratifiedDataset) -> Result<Arc<dyn Policy>>;
}

/// A "fitter" that ignores its data and returns a fixed control variate.
#[derive(Clone)]
pub struct FixedControl(pub Arc<dyn ControlVariate>);

impl QFitter for FixedControl {
    fn fit_q(&self, _train: &StratifiedDataset) -> Result<Arc<dyn ControlVariate>> {
        Ok(Arc::clone(&self.0))
    }
}

/// A "fitter" that ignores its data and returns a fixed policy.
#[derive(Clone, Debug)]
pub struct FixedBehavior(pub Arc<dyn Policy>);

impl BehaviorFitter for FixedBehavior {
    fn fit_behavior(&self, _train: &StratifiedDataset) -> Result<Arc<dyn Policy>> {
        Ok(Arc::clone(&self.0))
    }
}

/// Cross-fitting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossFit {
    pub folds: usize,
    pub seed: u64,
}

impl CrossFit {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self { folds, seed }
    }
}

impl Default for CrossFit {
    fn default() -> Self {
        Self { folds: 2, seed: 0 }
    }
}

/// A per-stratum random even partition into `Z` folds.
///
/// `folds[k][z]` lists the indices of stratum `k` in fold `z`; fold sizes in
/// a stratum differ by at most one, larger folds first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: Vec<Vec<Vec<usize>>>,
    num_folds: usize,
}

impl FoldPlan {
    /// Builds the partition. If some nonempty stratum has fewer than `folds`
    /// samples, the number of folds is reduced for the whole run.
    pub fn new(sizes: &[usize], folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(OpeError::InvalidArgument(format!(
                "cross-fitting needs at least 2 folds, got {folds}"
            )));
        }
        let smallest = sizes.iter().copied().filter(|&n| n > 0).min().unwrap_or(0);
        let effective = folds.min(smallest);
        if effective < folds {
            log::warn!(
                "smallest stratum has {smallest} samples; reducing cross-fitting folds from {folds} to {effective}"
            );
        }
        if effective < 2 {
            return Err(OpeError::InsufficientData(format!(
                "cannot cross-fit with stratum sizes {sizes:?}"
            )));
        }
        let folds = sizes
            .iter()
            .enumerate()
            .map(|(k, &nk)| {
                let mut idx: Vec<usize> = (0..nk).collect();
                let mut rng = rng_from_seed(derive_seed(seed, &[stream::FOLDS, k as u64]));
                idx.shuffle(&mut rng);
                let base = nk / effective;
                let extra = nk % effective;
                let mut out = Vec::with_capacity(effective);
                let mut start = 0;
                for z in 0..effective {
                    let len = base + usize::from(z < extra);
                    out.push(idx[start..start + len].to_vec());
                    start += len;
                }
                out
            })
            .collect();
        Ok(Self {
            folds,
            num_folds: effective,
        })
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    /// Index lists of `L_z`, per stratum.
    pub fn held_out(&self, z: usize) -> Vec<Vec<usize>> {
        self.folds.iter().map(|f| f[z].clone()).collect()
    }

    /// Index lists of `U_z`, per stratum.
    pub fn training(&self, z: usize) -> Vec<Vec<usize>> {
        self.folds
            .iter()
            .map(|f| {
                let mut idx: Vec<usize> = f
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != z)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                idx.sort_unstable();
                idx
            })
            .collect()
    }

    pub fn fold_sizes(&self, k: usize) -> Vec<usize> {
        self.folds[k].iter().map(Vec::len).collect()
    }

    /// `(U_z, L_z)` for every fold.
    pub fn splits(&self, data: &StratifiedDataset) -> Vec<(StratifiedDataset, StratifiedDataset)> {
        (0..self.num_folds)
            .map(|z| (data.select(&self.training(z)), data.select(&self.held_out(z))))
            .collect()
    }
}

/// `Ĵ_BI(ĥ, ĝ) = (1/n) Σ_z |L_z| Γ(L_z; ĥ^(z), ĝ^(z))`.
pub fn cross_fit_estimate(
    data: &StratifiedDataset,
    cross_fit: CrossFit,
    fitter: &dyn NuisanceFitter,
    pi_e: &dyn Policy,
) -> Result<f64> {
    let plan = FoldPlan::new(&data.sizes(), cross_fit.folds, cross_fit.seed)?;
    cross_fit_with_plan(data, &plan, fitter, pi_e)
}

/// As [`cross_fit_estimate`] with an explicit fold plan.
pub fn cross_fit_with_plan(
    data: &StratifiedDataset,
    plan: &FoldPlan,
    fitter: &dyn NuisanceFitter,
    pi_e: &dyn Policy,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for (train, eval) in plan.splits(data) {
        if eval.is_empty() {
            continue;
        }
        let nuisance = fitter.fit(&train, &eval.sizes())?;
        let (sum, n) = gamma_sum(&eval, nuisance.weight.as_ref(), nuisance.control.as_ref(), pi_e)?;
        total += sum;
        count += n;
    }
    if count == 0 {
        return Err(OpeError::InsufficientData("empty dataset".into()));
    }
    Ok(total / count as f64)
}

fn check_loggers(data: &StratifiedDataset, loggers: &[Arc<dyn Policy>]) -> Result<()> {
    if loggers.len() != data.num_strata() {
        return Err(OpeError::LengthMismatch {
            expected: data.num_strata(),
            got: loggers.len(),
        });
    }
    Ok(())
}

/// `Ĵ_DR = Ĵ_BI(1/π_*, q̂)` with known `π_*`.
pub fn dr_estimate(
    data: &StratifiedDataset,
    pi_e: &dyn Policy,
    pi_star: Arc<dyn Policy>,
    q_fitter: &dyn QFitter,
    cross_fit: CrossFit,
) -> Result<f64> {
    let weight: Arc<dyn WeightFunction> = Arc::new(InverseMarginal(pi_star));
    let fitter = |train: &StratifiedDataset, _: &[usize]| -> Result<Nuisance> {
        Ok(Nuisance {
            weight: Arc::clone(&weight),
            control: q_fitter.fit_q(train)?,
        })
    };
    cross_fit_estimate(data, cross_fit, &fitter, pi_e)
}

/// `Ĵ_DR-Avg = Ĵ_BI(1/π_k, q̂)`.
pub fn dr_avg(
    data: &StratifiedDataset,
    pi_e: &dyn Policy,
    loggers: &[Arc<dyn Policy>],
    q_fitter: &dyn QFitter,
    cross_fit: CrossFit,
) -> Result<f64> {
    check_loggers(data, loggers)?;
    let weight: Arc<dyn WeightFunction> = Arc::new(ScaledInverseLogger::unit(loggers.to_vec()));
    let fitter = |train: &StratifiedDataset, _: &[usize]| -> Result<Nuisance> {
        Ok(Nuisance {
            weight: Arc::clone(&weight),
            control: q_fitter.fit_q(train)?,
        })
    };
    cross_fit_estimate(data, cross_fit, &fitter, pi_e)
}

/// Precision weights `λ̂†` from per-stratum variances of the DR score
/// `(π_e/π_k)(r − q̂) + q̂(s, π_e)` on `train`, for evaluation data of size
/// `eval_sizes`, expressed as the weight function `h = (λ_k n / n_k) / π_k`.
pub fn dr_pw_weight(
    train: &StratifiedDataset,
    eval_sizes: &[usize],
    pi_e: &dyn Policy,
    loggers: &[Arc<dyn Policy>],
    q_hat: &dyn ControlVariate,
    floor: f64,
    config: PwConfig,
) -> Result<ScaledInverseLogger> {
    let unit = ScaledInverseLogger {
        loggers: loggers.to_vec(),
        scale: vec![1.0; loggers.len()],
        floor,
    };
    let scores = gamma_scores(train, &unit, q_hat, pi_e)?;
    let too_small = scores
        .iter()
        .zip(eval_sizes)
        .position(|(s, &nk)| nk > 0 && s.len() < 2);
    if let Some(k) = too_small {
        return Err(OpeError::InsufficientData(format!(
            "stratum {k} has {} training samples; precision weights need at least 2",
            scores[k].len()
        )));
    }
    let vars: Vec<f64> = scores.iter().map(|s| variance(s, config.bessel)).collect();
    let lambda = precision_weights(eval_sizes, &vars, config.variance_floor)?;
    let n: usize = eval_sizes.iter().sum();
    let scale = lambda
        .as_slice()
        .iter()
        .zip(eval_sizes)
        .map(|(&l, &nk)| if nk == 0 { 0.0 } else { l * n as f64 / nk as f64 })
        .collect();
    Ok(ScaledInverseLogger {
        loggers: loggers.to_vec(),
        scale,
        floor,
    })
}

/// `Ĵ_DR-PW = Ĵ_BI(n λ̂†_k / (n_k π_k), q̂)`.
pub fn dr_pw(
    data: &StratifiedDataset,
    pi_e: &dyn Policy,
    loggers: &[Arc<dyn Policy>],
    q_fitter: &dyn QFitter,
    cross_fit: CrossFit,
    config: PwConfig,
) -> Result<f64> {
    check_loggers(data, loggers)?;
    let fitter = |train: &StratifiedDataset, eval_sizes: &[usize]| -> Result<Nuisance> {
        let q_hat = q_fitter.fit_q(train)?;
        let weight = dr_pw_weight(train, eval_sizes, pi_e, loggers, q_hat.as_ref(), 0.0, config)?;
        Ok(Nuisance {
            weight: Arc::new(weight),
            control: q_hat,
        })
    };
    cross_fit_estimate(data, cross_fit, &fitter, pi_e)
}

/// `Ĵ_DR-π̂_* = Ĵ_BI(1/π̂_*, q̂)`, with `π̂_*` floored at `propensity_floor`
/// before inversion.
pub fn dr_estimated_propensity(
    data: &StratifiedDataset,
    pi_e: &dyn Policy,
    behavior_fitter: &dyn BehaviorFitter,
    q_fitter: &dyn QFitter,
    propensity_floor: f64,
    cross_fit: CrossFit,
) -> Result<f64> {
    let fitter = |train: &StratifiedDataset, _: &[usize]| -> Result<Nuisance> {
        Ok(Nuisance {
            weight: Arc::new(FlooredInverse {
                policy: behavior_fitter.fit_behavior(train)?,
                floor: propensity_floor,
            }),
            control: q_fitter.fit_q(train)?,
        })
    };
    cross_fit_estimate(data, cross_fit, &fitter, pi_e)
}
