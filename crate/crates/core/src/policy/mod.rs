//! Policies: stochastic maps from a context to a distribution over actions.
//!
//! Every policy is immutable after construction and shared as
//! `Arc<dyn Policy>`. The families here cover the evaluation and logging
//! policies of the benchmark (uniform, greedy, mixtures), parametric stand-ins
//! (softmax-linear), tabular policies for finite environments, and the
//! marginal logging policy `π_* = Σ_k ρ_k π_k`.

mod linear;
mod text;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::data::{check_simplex, Context};
use crate::env::DiscreteEnvironment;
use crate::error::{OpeError, Result};

pub use linear::{softmax_in_place, GreedyPolicy, LinearScorer, LinearSoftmaxPolicy};
pub use text::MatrixRecord;
pub(crate) use linear::affine;

/// Tolerance used when validating probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub trait Policy: Send + Sync + fmt::Debug {
    fn num_actions(&self) -> usize;

    /// Writes `π(·|s)` into `out`, which has length `num_actions()`.
    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]);

    fn probabilities(&self, ctx: &Context) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions()];
        self.fill_probabilities(ctx, &mut out);
        out
    }

    fn probability(&self, ctx: &Context, action: usize) -> f64 {
        self.probabilities(ctx)[action]
    }

    /// Draws an action by inverting the cumulative distribution.
    fn sample_action(&self, ctx: &Context, rng: &mut dyn RngCore) -> usize {
        let probs = self.probabilities(ctx);
        sample_from(&probs, rng)
    }
}

pub(crate) fn sample_from(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = a;
        }
        acc += p;
        if u < acc {
            return a;
        }
    }
    last_positive
}

fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(OpeError::InvalidPolicy(format!(
            "negative or non-finite probability in {probs:?}"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(OpeError::InvalidPolicy(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// `π_u(a|s) = 1/A`.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    num_actions: usize,
}

impl UniformPolicy {
    pub fn new(num_actions: usize) -> Self {
        assert!(num_actions > 0, "uniform policy needs at least one action");
        Self { num_actions }
    }
}

impl Policy for UniformPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn fill_probabilities(&self, _ctx: &Context, out: &mut [f64]) {
        out.fill(1.0 / self.num_actions as f64);
    }
}

/// A context-independent distribution over actions.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_distribution(&probs)?;
        Ok(Self { probs })
    }

    pub fn point_mass(num_actions: usize, action: usize) -> Self {
        let mut probs = vec![0.0; num_actions];
        probs[action] = 1.0;
        Self { probs }
    }
}

impl Policy for FixedPolicy {
    fn num_actions(&self) -> usize {
        self.probs.len()
    }

    fn fill_probabilities(&self, _ctx: &Context, out: &mut [f64]) {
        out.copy_from_slice(&self.probs);
    }
}

/// One distribution per context id. Used on finite environments.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    table: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let num_actions = table.first().map_or(0, Vec::len);
        if num_actions == 0 {
            return Err(OpeError::InvalidPolicy("empty table".into()));
        }
        for row in &table {
            if row.len() != num_actions {
                return Err(OpeError::LengthMismatch {
                    expected: num_actions,
                    got: row.len(),
                });
            }
            validate_distribution(row)?;
        }
        Ok(Self { table })
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    /// Tabulates any policy over the contexts of a finite environment.
    pub fn from_policy(policy: &dyn Policy, env: &DiscreteEnvironment) -> Self {
        let table = env
            .contexts()
            .iter()
            .map(|c| policy.probabilities(c))
            .collect();
        Self { table }
    }
}

impl Policy for TabularPolicy {
    fn num_actions(&self) -> usize {
        self.table[0].len()
    }

    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]) {
        out.copy_from_slice(&self.table[ctx.id]);
    }
}

/// `alpha · base(a|s) + (1 − alpha)/A`.
#[derive(Debug, Clone)]
pub struct MixturePolicy {
    alpha: f64,
    base: Arc<dyn Policy>,
}

impl MixturePolicy {
    pub fn new(alpha: f64, base: Arc<dyn Policy>) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(OpeError::InvalidArgument(format!(
                "mixture weight {alpha} outside [0, 1]"
            )));
        }
        Ok(Self { alpha, base })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn uniform_weight(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn base(&self) -> &Arc<dyn Policy> {
        &self.base
    }
}

impl Policy for MixturePolicy {
    fn num_actions(&self) -> usize {
        self.base.num_actions()
    }

    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]) {
        self.base.fill_probabilities(ctx, out);
        let floor = (1.0 - self.alpha) / out.len() as f64;
        for p in out.iter_mut() {
            *p = self.alpha * *p + floor;
        }
    }
}

/// The marginal logging policy `π_*(a|s) = Σ_k ρ_k π_k(a|s)`.
#[derive(Debug, Clone)]
pub struct MarginalPolicy {
    loggers: Vec<Arc<dyn Policy>>,
    rho: Vec<f64>,
}

impl MarginalPolicy {
    pub fn loggers(&self) -> &[Arc<dyn Policy>] {
        &self.loggers
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

impl Policy for MarginalPolicy {
    fn num_actions(&self) -> usize {
        self.loggers[0].num_actions()
    }

    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; out.len()];
        for (logger, &w) in self.loggers.iter().zip(&self.rho) {
            if w == 0.0 {
                continue;
            }
            logger.fill_probabilities(ctx, &mut buf);
            for (o, p) in out.iter_mut().zip(&buf) {
                *o += w * p;
            }
        }
    }
}

/// Builds `π_*` from the loggers and stratum proportions.
///
/// With a single logger the logger itself is returned.
pub fn marginal_policy(loggers: &[Arc<dyn Policy>], rho: &[f64]) -> Result<Arc<dyn Policy>> {
    if loggers.len() != rho.len() {
        return Err(OpeError::LengthMismatch {
            expected: loggers.len(),
            got: rho.len(),
        });
    }
    check_simplex(rho)?;
    let num_actions = loggers[0].num_actions();
    if loggers.iter().any(|p| p.num_actions() != num_actions) {
        return Err(OpeError::InvalidPolicy(
            "loggers disagree on the number of actions".into(),
        ));
    }
    if loggers.len() == 1 {
        return Ok(Arc::clone(&loggers[0]));
    }
    Ok(Arc::new(MarginalPolicy {
        loggers: loggers.to_vec(),
        rho: rho.to_vec(),
    }))
}

/// Outcome of a weak-overlap check: every `(context id, action)` where the
/// evaluation policy has mass but the logging policy does not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapReport {
    pub violations: Vec<(usize, usize)>,
}

impl OverlapReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `π_e(a|s) > 0 ⇒ π_*(a|s) > 0` over the environment's support.
pub fn check_weak_overlap(
    pi_e: &dyn Policy,
    pi_star: &dyn Policy,
    env: &DiscreteEnvironment,
) -> OverlapReport {
    let mut violations = Vec::new();
    for ctx in env.contexts() {
        let pe = pi_e.probabilities(ctx);
        let ps = pi_star.probabilities(ctx);
        for (a, (&e, &s)) in pe.iter().zip(&ps).enumerate() {
            if e > 0.0 && s <= 0.0 {
                violations.push((ctx.id, a));
            }
        }
    }
    OverlapReport { violations }
}

/// Whole weak overlap: every logger individually covers `π_e`.
pub fn check_whole_weak_overlap(
    pi_e: &dyn Policy,
    loggers: &[Arc<dyn Policy>],
    env: &DiscreteEnvironment,
) -> Vec<OverlapReport> {
    loggers
        .iter()
        .map(|l| check_weak_overlap(pi_e, l.as_ref(), env))
        .collect()
}
