//! Point estimators of the policy value `J` on stratified data.
//!
//! Everything here is an instance of the weighted, control-variate estimator
//!
//! ```text
//! Γ(D; h, g) = E_n[ h(k,s,a) π_e(a|s) (r − g(s,a)) + g(s, π_e) ]
//! ```
//!
//! which is unbiased whenever `Σ_k n_k π_k(a|s) h(k,s,a) = n` on the support
//! of `π_e`. The IS family fixes `g = 0`; the doubly robust family plugs in a
//! fitted reward model; the cross-fitted versions estimate `(h, g)` on one
//! part of the data and evaluate on the other.
//!
//! Convention: when `π_e(a|s) = 0` the weighted residual contributes zero,
//! even if `h` is undefined there.

mod crossfit;
mod is;

use std::sync::Arc;

use crate::data::{Context, LoggedSample, StratifiedDataset};
use crate::env::DiscreteEnvironment;
use crate::error::{OpeError, Result};
use crate::policy::Policy;

pub use crossfit::{
    cross_fit_estimate, cross_fit_with_plan, dr_avg, dr_estimate, dr_estimated_propensity, dr_pw,
    dr_pw_weight, BehaviorFitter, CrossFit, FixedBehavior, FixedControl, FoldPlan, Nuisance,
    NuisanceFitter, QFitter,
};
pub use is::{
    is_avg, is_estimate, is_pw_feasible, is_pw_weights, precision_weights, rho_weights, weighted_is, PwConfig,
    SimplexWeights, VARIANCE_FLOOR,
};

/// Weights `h(k, s, a)`.
pub trait WeightFunction: Send + Sync {
    fn weight(&self, logger: usize, ctx: &Context, action: usize) -> f64;
}

impl<F> WeightFunction for F
where
    F: Fn(usize, &Context, usize) -> f64 + Send + Sync,
{
    fn weight(&self, logger: usize, ctx: &Context, action: usize) -> f64 {
        self(logger, ctx, action)
    }
}

/// Control variates `g(s, a)`.
pub trait ControlVariate: Send + Sync {
    fn value(&self, ctx: &Context, action: usize) -> f64;

    /// `g(s, π) = Σ_a π(a|s) g(s, a)`, given `π(·|s)`.
    fn expected_under(&self, ctx: &Context, probs: &[f64]) -> f64 {
        probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(a, p)| p * self.value(ctx, a))
            .sum()
    }

    fn expected(&self, ctx: &Context, pi: &dyn Policy) -> f64 {
        self.expected_under(ctx, &pi.probabilities(ctx))
    }
}

impl<F> ControlVariate for F
where
    F: Fn(&Context, usize) -> f64 + Send + Sync,
{
    fn value(&self, ctx: &Context, action: usize) -> f64 {
        self(ctx, action)
    }
}

/// `g ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroControl;

impl ControlVariate for ZeroControl {
    fn value(&self, _ctx: &Context, _action: usize) -> f64 {
        0.0
    }

    fn expected_under(&self, _ctx: &Context, _probs: &[f64]) -> f64 {
        0.0
    }
}

/// `g(s, a)` looked up by context id.
#[derive(Debug, Clone)]
pub struct TabularControl {
    pub table: Vec<Vec<f64>>,
}

impl ControlVariate for TabularControl {
    fn value(&self, ctx: &Context, action: usize) -> f64 {
        self.table[ctx.id][action]
    }
}

/// `h = 1/π(a|s)` for a single (marginal) logging policy.
#[derive(Debug, Clone)]
pub struct InverseMarginal(pub Arc<dyn Policy>);

impl WeightFunction for InverseMarginal {
    fn weight(&self, _logger: usize, ctx: &Context, action: usize) -> f64 {
        1.0 / self.0.probability(ctx, action)
    }
}

/// `h = 1/max(π̂(a|s), floor)` for an estimated logging policy.
#[derive(Debug, Clone)]
pub struct FlooredInverse {
    pub policy: Arc<dyn Policy>,
    pub floor: f64,
}

impl WeightFunction for FlooredInverse {
    fn weight(&self, _logger: usize, ctx: &Context, action: usize) -> f64 {
        1.0 / self.policy.probability(ctx, action).max(self.floor)
    }
}

/// `h(k, s, a) = scale_k / π_k(a|s)`.
///
/// `scale ≡ 1` gives the per-logger inverse weights; `scale_k = λ_k n / n_k`
/// gives the simplex-weighted IS family.
#[derive(Debug, Clone)]
pub struct ScaledInverseLogger {
    pub loggers: Vec<Arc<dyn Policy>>,
    pub scale: Vec<f64>,
    /// Optional propensity floor (for estimated loggers).
    pub floor: f64,
}

impl ScaledInverseLogger {
    pub fn unit(loggers: Vec<Arc<dyn Policy>>) -> Self {
        let scale = vec![1.0; loggers.len()];
        Self {
            loggers,
            scale,
            floor: 0.0,
        }
    }
}

impl WeightFunction for ScaledInverseLogger {
    fn weight(&self, logger: usize, ctx: &Context, action: usize) -> f64 {
        let scale = self.scale[logger];
        if scale == 0.0 {
            return 0.0;
        }
        scale / self.loggers[logger].probability(ctx, action).max(self.floor)
    }
}

/// The doubly robust score `φ(s,a,r; g) = (π_e/π_*)(r − g(s,a)) + g(s, π_e)`.
pub fn phi(
    sample: &LoggedSample,
    g: &dyn ControlVariate,
    pi_e: &dyn Policy,
    pi_star: &dyn Policy,
) -> Result<f64> {
    let ctx = &sample.context;
    let probs = pi_e.probabilities(ctx);
    let pe = probs[sample.action];
    let baseline = g.expected_under(ctx, &probs);
    if pe == 0.0 {
        return Ok(baseline);
    }
    let ps = pi_star.probability(ctx, sample.action);
    if !(ps > 0.0) {
        return Err(OpeError::OverlapViolation {
            context: ctx.id,
            action: sample.action,
            target: pe,
            logging: ps,
        });
    }
    Ok(pe / ps * (sample.reward - g.value(ctx, sample.action)) + baseline)
}

/// The per-sample summand of `Γ(D; h, g)`.
pub fn gamma_score(
    sample: &LoggedSample,
    h: &dyn WeightFunction,
    g: &dyn ControlVariate,
    pi_e: &dyn Policy,
    probs: &mut Vec<f64>,
) -> Result<f64> {
    let ctx = &sample.context;
    probs.resize(pi_e.num_actions(), 0.0);
    pi_e.fill_probabilities(ctx, probs);
    let pe = probs[sample.action];
    let baseline = g.expected_under(ctx, probs);
    if !baseline.is_finite() {
        return Err(OpeError::NonFinite(format!(
            "control variate at context {}",
            ctx.id
        )));
    }
    if pe == 0.0 {
        return Ok(baseline);
    }
    let w = h.weight(sample.logger, ctx, sample.action);
    let gv = g.value(ctx, sample.action);
    if !w.is_finite() {
        return Err(OpeError::NonFinite(format!(
            "weight h({}, {}, {}) = {w}; the logging policy may not cover the evaluation policy",
            sample.logger, ctx.id, sample.action
        )));
    }
    if !gv.is_finite() {
        return Err(OpeError::NonFinite(format!(
            "control variate g({}, {}) = {gv}",
            ctx.id, sample.action
        )));
    }
    Ok(w * pe * (sample.reward - gv) + baseline)
}

/// `(Σ scores, count)` of `Γ` over a dataset, without dividing.
pub fn gamma_sum(
    data: &StratifiedDataset,
    h: &dyn WeightFunction,
    g: &dyn ControlVariate,
    pi_e: &dyn Policy,
) -> Result<(f64, usize)> {
    let mut probs = Vec::new();
    let mut total = 0.0;
    for s in data.iter() {
        total += gamma_score(s, h, g, pi_e, &mut probs)?;
    }
    Ok((total, data.len()))
}

/// Per-stratum `Γ` summands.
pub fn gamma_scores(
    data: &StratifiedDataset,
    h: &dyn WeightFunction,
    g: &dyn ControlVariate,
    pi_e: &dyn Policy,
) -> Result<Vec<Vec<f64>>> {
    let mut probs = Vec::new();
    data.strata()
        .iter()
        .map(|stratum| {
            stratum
                .iter()
                .map(|s| gamma_score(s, h, g, pi_e, &mut probs))
                .collect()
        })
        .collect()
}

/// `Γ(D; h, g)`.
pub fn gamma_estimate(
    data: &StratifiedDataset,
    h: &dyn WeightFunction,
    g: &dyn ControlVariate,
    pi_e: &dyn Policy,
) -> Result<f64> {
    if data.is_empty() {
        return Err(OpeError::InsufficientData("empty dataset".into()));
    }
    let (total, n) = gamma_sum(data, h, g, pi_e)?;
    Ok(total / n as f64)
}

/// Checks `Σ_k n_k π_k(a|s) h(k,s,a) = n` (relative tolerance `1e-9`) at every
/// `(s, a)` of the environment where `π_e(a|s) > 0`.
pub fn check_constraint(
    h: &dyn WeightFunction,
    loggers: &[Arc<dyn Policy>],
    sizes: &[usize],
    env: &DiscreteEnvironment,
    pi_e: &dyn Policy,
) -> bool {
    let n: usize = sizes.iter().sum();
    let n = n as f64;
    env.contexts().iter().all(|ctx| {
        let pe = pi_e.probabilities(ctx);
        (0..env.num_actions()).filter(|&a| pe[a] > 0.0).all(|a| {
            let lhs: f64 = loggers
                .iter()
                .zip(sizes)
                .enumerate()
                .filter(|(_, (_, &nk))| nk > 0)
                .map(|(k, (pk, &nk))| {
                    let p = pk.probability(ctx, a);
                    if p == 0.0 {
                        0.0
                    } else {
                        nk as f64 * p * h.weight(k, ctx, a)
                    }
                })
                .sum();
            lhs.is_finite() && (lhs - n).abs() <= 1e-9 * n.max(1.0)
        })
    })
}
