//! Exact enumeration on finite environments: means and variances of any
//! estimator that averages a per-sample score, under stratified and
//! iid-mixture sampling.

mod dilemma;
mod instance;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Context, LoggedSample};
use crate::env::{checked_probabilities, DiscreteEnvironment};
use crate::error::{OpeError, Result};
use crate::estimators::{gamma_score, precision_weights, ControlVariate, SimplexWeights, WeightFunction};
use crate::policy::Policy;

pub use dilemma::{find_dilemma_instances, monte_carlo_variances, DilemmaInstance, DilemmaSearch, McVariances};
pub use instance::{FiniteInstance, InstanceRecord, TabularWeight};

/// A per-sample score `f(k, s, a, r)`; `E_n[f]` is the estimator.
pub trait ScoreFunction: Sync {
    fn score(&self, logger: usize, ctx: &Context, action: usize, reward: f64) -> f64;
}

impl<F> ScoreFunction for F
where
    F: Fn(usize, &Context, usize, f64) -> f64 + Sync,
{
    fn score(&self, logger: usize, ctx: &Context, action: usize, reward: f64) -> f64 {
        self(logger, ctx, action, reward)
    }
}

/// The `Γ(·; h, g)` summand as a score; errors become NaN and are reported by
/// the moment functions.
pub struct GammaScore<'a> {
    pub h: &'a dyn WeightFunction,
    pub g: &'a dyn ControlVariate,
    pub pi_e: &'a dyn Policy,
}

impl ScoreFunction for GammaScore<'_> {
    fn score(&self, logger: usize, ctx: &Context, action: usize, reward: f64) -> f64 {
        let sample = LoggedSample {
            logger,
            context: ctx.clone(),
            action,
            reward,
        };
        gamma_score(&sample, self.h, self.g, self.pi_e, &mut Vec::new()).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// `E_{π_k}[f]` and `var_{π_k}[f]` by summing over the `(s, a, r)` support.
pub fn logger_moments(
    env: &DiscreteEnvironment,
    logger: &dyn Policy,
    k: usize,
    f: &dyn ScoreFunction,
) -> Result<Moments> {
    let mut support = Vec::new();
    for (ctx, &ps) in env.contexts().iter().zip(env.context_probs()) {
        if ps == 0.0 {
            continue;
        }
        let probs = checked_probabilities(logger, ctx, env.num_actions())?;
        for (a, &pa) in probs.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (r, pr) in env.reward_support(ctx.id, a) {
                let v = f.score(k, ctx, a, r);
                if !v.is_finite() {
                    return Err(OpeError::NonFinite(format!(
                        "score at logger {k}, context {}, action {a}, reward {r}",
                        ctx.id
                    )));
                }
                support.push((ps * pa * pr, v));
            }
        }
    }
    let mean: f64 = support.iter().map(|(p, v)| p * v).sum();
    let variance = support.iter().map(|(p, v)| p * (v - mean).powi(2)).sum();
    Ok(Moments { mean, variance })
}

fn per_logger(env: &DiscreteEnvironment, loggers: &[Arc<dyn Policy>], f: &dyn ScoreFunction) -> Result<Vec<Moments>> {
    loggers
        .iter()
        .enumerate()
        .map(|(k, l)| logger_moments(env, l.as_ref(), k, f))
        .collect()
}

/// Mean `Σ_k ρ_k E_{π_k}[f]` and variance `(1/n²) Σ_k n_k var_{π_k}[f]` of
/// `E_n[f]` when stratum sizes are fixed.
pub fn exact_moments_stratified(
    env: &DiscreteEnvironment,
    loggers: &[Arc<dyn Policy>],
    sizes: &[usize],
    f: &dyn ScoreFunction,
) -> Result<Moments> {
    if loggers.len() != sizes.len() {
        return Err(OpeError::LengthMismatch {
            expected: loggers.len(),
            got: sizes.len(),
        });
    }
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return Err(OpeError::InsufficientData("all strata are empty".into()));
    }
    let n = n as f64;
    let m = per_logger(env, loggers, f)?;
    let mean = m.iter().zip(sizes).map(|(mk, &nk)| nk as f64 / n * mk.mean).sum();
    let variance = m.iter().zip(sizes).map(|(mk, &nk)| nk as f64 * mk.variance).sum::<f64>() / (n * n);
    Ok(Moments { mean, variance })
}

/// Moments of `E_n[f]` when each of the `n` samples independently picks its
/// logger with probability `ρ_k`.
pub fn exact_moments_iid(
    env: &DiscreteEnvironment,
    loggers: &[Arc<dyn Policy>],
    rho: &[f64],
    n: usize,
    f: &dyn ScoreFunction,
) -> Result<Moments> {
    if loggers.len() != rho.len() {
        return Err(OpeError::LengthMismatch {
            expected: loggers.len(),
            got: rho.len(),
        });
    }
    crate::data::check_simplex(rho)?;
    if n == 0 {
        return Err(OpeError::InsufficientData("n must be positive".into()));
    }
    let m = per_logger(env, loggers, f)?;
    let mean: f64 = m.iter().zip(rho).map(|(mk, r)| r * mk.mean).sum();
    // Law of total variance over the logger label.
    let mixture: f64 = m
        .iter()
        .zip(rho)
        .map(|(mk, r)| r * (mk.variance + (mk.mean - mean).powi(2)))
        .sum();
    Ok(Moments {
        mean,
        variance: mixture / n as f64,
    })
}

/// `λ*_k ∝ n_k / var_{π_k}[π_e r / π_k]` from exact per-stratum variances.
pub fn oracle_precision_weights(
    env: &DiscreteEnvironment,
    loggers: &[Arc<dyn Policy>],
    sizes: &[usize],
    pi_e: &dyn Policy,
) -> Result<SimplexWeights> {
    let is_k = |k: usize, ctx: &Context, a: usize, r: f64| {
        let pe = pi_e.probability(ctx, a);
        if pe == 0.0 {
            0.0
        } else {
            pe * r / loggers[k].probability(ctx, a)
        }
    };
    let vars: Vec<f64> = per_logger(env, loggers, &is_k)?.iter().map(|m| m.variance).collect();
    precision_weights(sizes, &vars, 0.0)
}
