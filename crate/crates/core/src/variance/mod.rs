//! Variance functionals: the stratified and pooled empirical variances of a
//! score, the efficiency bound `V*`, and the variance-minimizing control
//! variate fits (SMRDR and MRDR).

mod objective;

use std::sync::Arc;

use crate::data::{LoggedSample, StratifiedDataset};
use crate::env::{checked_probabilities, DiscreteEnvironment};
use crate::error::{OpeError, Result};
use crate::policy::{marginal_policy, Policy};
use crate::stats::variance;

pub use objective::{
    fit_control_variate, mrdr_estimate, mrdr_fit, smrdr_estimate, smrdr_fit, FittedControlVariate, QClass,
    DEFAULT_STARTS,
    VarianceObjective,
};

/// Which empirical variance a control-variate fit minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceObjectiveKind {
    /// `Σ_k ρ_k var_{n_k}[f]`.
    Stratified,
    /// `var_n[f]` over the pooled samples.
    Iid,
}

fn scores(data: &StratifiedDataset, mut score: impl FnMut(&LoggedSample) -> f64) -> Result<Vec<Vec<f64>>> {
    data.strata()
        .iter()
        .map(|s| {
            let v: Vec<f64> = s.iter().map(&mut score).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(OpeError::NonFinite("score".into()));
            }
            Ok(v)
        })
        .collect()
}

/// `Σ_k ρ_k var_{n_k}[f]` with population (divide-by-`n_k`) variances.
pub fn empirical_variance_stratified(
    data: &StratifiedDataset,
    score: impl FnMut(&LoggedSample) -> f64,
) -> Result<f64> {
    if let Some(k) = data.sizes().iter().position(|&n| n == 0) {
        return Err(OpeError::EmptyStratum(k));
    }
    let rho = data.proportions();
    Ok(scores(data, score)?
        .iter()
        .zip(rho)
        .map(|(s, r)| r * variance(s, false))
        .sum())
}

/// Population variance of `f` over the pooled samples.
pub fn empirical_variance_iid(data: &StratifiedDataset, score: impl FnMut(&LoggedSample) -> f64) -> Result<f64> {
    if data.is_empty() {
        return Err(OpeError::InsufficientData("empty dataset".into()));
    }
    let pooled: Vec<f64> = scores(data, score)?.into_iter().flatten().collect();
    Ok(variance(&pooled, false))
}

/// `V* = E_{π_*}[(π_e/π_*)² σ_r²] + var_{p_S}[v(s)]` by enumeration.
pub fn efficiency_bound(
    env: &DiscreteEnvironment,
    pi_e: &dyn Policy,
    loggers: &[Arc<dyn Policy>],
    rho: &[f64],
) -> Result<f64> {
    let pi_star = marginal_policy(loggers, rho)?;
    let a_count = env.num_actions();
    let mut noise = 0.0;
    let mut mean_v = 0.0;
    let mut mean_v2 = 0.0;
    for (ctx, &p) in env.contexts().iter().zip(env.context_probs()) {
        let pe = checked_probabilities(pi_e, ctx, a_count)?;
        let ps = checked_probabilities(pi_star.as_ref(), ctx, a_count)?;
        let mut v = 0.0;
        for a in 0..a_count {
            v += pe[a] * env.q(ctx.id, a);
            if pe[a] == 0.0 {
                continue;
            }
            if ps[a] == 0.0 {
                return Err(OpeError::OverlapViolation {
                    context: ctx.id,
                    action: a,
                    target: pe[a],
                    logging: 0.0,
                });
            }
            noise += p * pe[a] * pe[a] / ps[a] * env.reward_variance(ctx.id, a);
        }
        mean_v += p * v;
        mean_v2 += p * v * v;
    }
    Ok(noise + (mean_v2 - mean_v * mean_v).max(0.0))
}
