//! Finite ground-truth environments and the two data-generating mechanisms.
//!
//! A [`DiscreteEnvironment`] has a finite context support with probabilities
//! `p_S`, a mean-reward table `q(s, a)` and either scaled-Bernoulli or
//! deterministic rewards, so every expectation over `(s, a, r)` is a finite
//! sum. Stratified sampling draws exactly `n_k` samples from logger `k`; iid
//! mixture sampling draws the logger identity itself at random.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::data::{check_simplex, Context, LoggedSample, StratifiedDataset};
use crate::error::{OpeError, Result};
use crate::policy::{Policy, SIMPLEX_TOL};
use crate::rng::{derive_seed, rng_from_seed, stream, OpeRng};

/// Reward emission model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardModel {
    /// `r ∈ {0, r_max}` with `P(r = r_max) = q / r_max`.
    Bernoulli { r_max: f64 },
    /// `r = q(s, a)` exactly.
    Deterministic,
}

impl Default for RewardModel {
    fn default() -> Self {
        RewardModel::Bernoulli { r_max: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteEnvironment {
    contexts: Vec<Context>,
    context_probs: Vec<f64>,
    q: Vec<Vec<f64>>,
    reward: RewardModel,
}

impl DiscreteEnvironment {
    /// Context ids must be `0..contexts.len()` in order.
    pub fn new(
        contexts: Vec<Context>,
        context_probs: Vec<f64>,
        q: Vec<Vec<f64>>,
        reward: RewardModel,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(OpeError::InvalidArgument("no contexts".into()));
        }
        if contexts.len() != context_probs.len() || contexts.len() != q.len() {
            return Err(OpeError::LengthMismatch {
                expected: contexts.len(),
                got: context_probs.len().min(q.len()),
            });
        }
        for (i, c) in contexts.iter().enumerate() {
            if c.id != i {
                return Err(OpeError::InvalidArgument(format!(
                    "context at position {i} has id {}",
                    c.id
                )));
            }
        }
        check_simplex(&context_probs)?;
        let num_actions = q[0].len();
        if num_actions == 0 || q.iter().any(|row| row.len() != num_actions) {
            return Err(OpeError::InvalidArgument("ragged or empty q table".into()));
        }
        let r_max = match reward {
            RewardModel::Bernoulli { r_max } => r_max,
            RewardModel::Deterministic => f64::INFINITY,
        };
        if !(r_max > 0.0) {
            return Err(OpeError::InvalidArgument(format!("r_max = {r_max}")));
        }
        if let Some(bad) = q.iter().flatten().find(|&&v| !(0.0..=r_max).contains(&v)) {
            return Err(OpeError::InvalidArgument(format!(
                "mean reward {bad} outside [0, {r_max}]"
            )));
        }
        Ok(Self {
            contexts,
            context_probs,
            q,
            reward,
        })
    }

    /// Contexts carry one-hot features of length `num_contexts`.
    pub fn with_one_hot_contexts(
        context_probs: Vec<f64>,
        q: Vec<Vec<f64>>,
        reward: RewardModel,
    ) -> Result<Self> {
        let m = context_probs.len();
        let contexts = (0..m)
            .map(|i| {
                let mut f = vec![0.0; m];
                f[i] = 1.0;
                Context::new(i, f)
            })
            .collect();
        Self::new(contexts, context_probs, q, reward)
    }

    /// Two equiprobable contexts, two actions, `q = [[0.8, 0.2], [0.4, 0.6]]`,
    /// Bernoulli rewards.
    pub fn toy() -> Self {
        Self::with_one_hot_contexts(
            vec![0.5, 0.5],
            vec![vec![0.8, 0.2], vec![0.4, 0.6]],
            RewardModel::default(),
        )
        .expect("toy environment is valid")
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn num_actions(&self) -> usize {
        self.q[0].len()
    }

    pub fn q_table(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn q(&self, context: usize, action: usize) -> f64 {
        self.q[context][action]
    }

    pub fn reward_model(&self) -> RewardModel {
        self.reward
    }

    /// Largest possible reward.
    pub fn r_max(&self) -> f64 {
        match self.reward {
            RewardModel::Bernoulli { r_max } => r_max,
            RewardModel::Deterministic => self.q.iter().flatten().copied().fold(0.0, f64::max),
        }
    }

    /// `σ_r²(s, a)`.
    pub fn reward_variance(&self, context: usize, action: usize) -> f64 {
        let q = self.q[context][action];
        match self.reward {
            RewardModel::Bernoulli { r_max } => q * (r_max - q),
            RewardModel::Deterministic => 0.0,
        }
    }

    /// Reward support as `(reward, probability)` pairs with positive probability.
    pub fn reward_support(&self, context: usize, action: usize) -> Vec<(f64, f64)> {
        let q = self.q[context][action];
        match self.reward {
            RewardModel::Bernoulli { r_max } => {
                let p = q / r_max;
                let mut out = Vec::with_capacity(2);
                if p < 1.0 {
                    out.push((0.0, 1.0 - p));
                }
                if p > 0.0 {
                    out.push((r_max, p));
                }
                out
            }
            RewardModel::Deterministic => vec![(q, 1.0)],
        }
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, context: usize, action: usize, rng: &mut R) -> f64 {
        let q = self.q[context][action];
        match self.reward {
            RewardModel::Bernoulli { r_max } => {
                if rng.gen::<f64>() < q / r_max {
                    r_max
                } else {
                    0.0
                }
            }
            RewardModel::Deterministic => q,
        }
    }

    /// `v(s) = q(s, π)` for every context.
    pub fn state_values(&self, pi: &dyn Policy) -> Result<Vec<f64>> {
        self.contexts
            .iter()
            .map(|c| {
                let probs = checked_probabilities(pi, c, self.num_actions())?;
                Ok(probs.iter().zip(&self.q[c.id]).map(|(p, q)| p * q).sum())
            })
            .collect()
    }

    /// Relabels actions: new action `i` is old action `perm[i]`.
    pub fn permute_actions(&self, perm: &[usize]) -> Result<Self> {
        let q = self
            .q
            .iter()
            .map(|row| perm.iter().map(|&a| row[a]).collect())
            .collect();
        Self::new(self.contexts.clone(), self.context_probs.clone(), q, self.reward)
    }

    fn context_sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.context_probs).expect("context probabilities validated")
    }

    fn draw(
        &self,
        logger: usize,
        policy: &dyn Policy,
        contexts: &WeightedIndex<f64>,
        rng: &mut OpeRng,
    ) -> LoggedSample {
        let s = contexts.sample(rng);
        let ctx = &self.contexts[s];
        let a = policy.sample_action(ctx, rng);
        let r = self.sample_reward(s, a, rng);
        LoggedSample {
            logger,
            context: ctx.clone(),
            action: a,
            reward: r,
        }
    }
}

pub(crate) fn checked_probabilities(
    pi: &dyn Policy,
    ctx: &Context,
    num_actions: usize,
) -> Result<Vec<f64>> {
    if pi.num_actions() != num_actions {
        return Err(OpeError::InvalidPolicy(format!(
            "policy has {} actions, environment has {num_actions}",
            pi.num_actions()
        )));
    }
    let probs = pi.probabilities(ctx);
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(OpeError::InvalidPolicy(format!(
            "action probabilities at context {} are not a distribution: {probs:?}",
            ctx.id
        )));
    }
    Ok(probs)
}

/// `J = Σ_s p_S(s) Σ_a π(a|s) q(s, a)`.
pub fn policy_value_exact(env: &DiscreteEnvironment, pi_e: &dyn Policy) -> Result<f64> {
    let v = env.state_values(pi_e)?;
    Ok(env
        .context_probs()
        .iter()
        .zip(&v)
        .map(|(p, v)| p * v)
        .sum())
}

fn check_loggers(env: &DiscreteEnvironment, loggers: &[Arc<dyn Policy>]) -> Result<()> {
    if loggers.is_empty() {
        return Err(OpeError::InvalidArgument("no loggers".into()));
    }
    for l in loggers {
        if l.num_actions() != env.num_actions() {
            return Err(OpeError::InvalidPolicy(format!(
                "logger has {} actions, environment has {}",
                l.num_actions(),
                env.num_actions()
            )));
        }
    }
    Ok(())
}

/// Draws exactly `sizes[k]` samples from `p_S × π_k × p_{R|S,A}` for each logger.
///
/// Each stratum uses its own derived stream, so stratum `k` does not depend
/// on the sizes of the other strata.
pub fn sample_stratified(
    env: &DiscreteEnvironment,
    loggers: &[Arc<dyn Policy>],
    sizes: &[usize],
    seed: u64,
) -> Result<StratifiedDataset> {
    check_loggers(env, loggers)?;
    if sizes.len() != loggers.len() {
        return Err(OpeError::LengthMismatch {
            expected: loggers.len(),
            got: sizes.len(),
        });
    }
    let contexts = env.context_sampler();
    let strata = loggers
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(k, (logger, &nk))| {
            let mut rng = rng_from_seed(derive_seed(seed, &[stream::LOGGER, k as u64]));
            (0..nk)
                .map(|_| env.draw(k, logger.as_ref(), &contexts, &mut rng))
                .collect()
        })
        .collect();
    StratifiedDataset::new(strata)
}

/// Draws `n` samples, each from a logger chosen by `Categorical(rho)`.
pub fn sample_iid_mixture(
    env: &DiscreteEnvironment,
    loggers: &[Arc<dyn Policy>],
    rho: &[f64],
    n: usize,
    seed: u64,
) -> Result<StratifiedDataset> {
    check_loggers(env, loggers)?;
    if rho.len() != loggers.len() {
        return Err(OpeError::LengthMismatch {
            expected: loggers.len(),
            got: rho.len(),
        });
    }
    check_simplex(rho)?;
    let contexts = env.context_sampler();
    let logger_dist = WeightedIndex::new(rho.iter().map(|r| r.max(0.0)))
        .map_err(|e| OpeError::InvalidArgument(e.to_string()))?;
    let mut rng = rng_from_seed(derive_seed(seed, &[stream::LOGGER]));
    let mut strata = vec![Vec::new(); loggers.len()];
    for _ in 0..n {
        let k = logger_dist.sample(&mut rng);
        strata[k].push(env.draw(k, loggers[k].as_ref(), &contexts, &mut rng));
    }
    StratifiedDataset::new(strata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{FixedPolicy, TabularPolicy, UniformPolicy};

    fn uniform2() -> Arc<dyn Policy> {
        Arc::new(UniformPolicy::new(2))
    }

    #[test]
    fn toy_value_under_uniform() {
        let env = DiscreteEnvironment::toy();
        let j = policy_value_exact(&env, &UniformPolicy::new(2)).unwrap();
        assert!((j - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_environment_value() {
        let env = DiscreteEnvironment::with_one_hot_contexts(
            vec![1.0],
            vec![vec![0.7]],
            RewardModel::Deterministic,
        )
        .unwrap();
        let j = policy_value_exact(&env, &FixedPolicy::point_mass(1, 0)).unwrap();
        assert!((j - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rejects_policy_with_wrong_action_count() {
        let env = DiscreteEnvironment::toy();
        assert!(policy_value_exact(&env, &UniformPolicy::new(3)).is_err());
    }

    #[test]
    fn reward_variance_is_bernoulli() {
        let env = DiscreteEnvironment::toy();
        let v: Vec<f64> = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| env.reward_variance(s, a))
            .collect();
        let expected = [0.16, 0.16, 0.24, 0.24];
        for (x, e) in v.iter().zip(expected) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn stratified_sizes_are_exact() {
        let env = DiscreteEnvironment::toy();
        let d = sample_stratified(&env, &[uniform2(), uniform2()], &[0, 5], 1).unwrap();
        assert_eq!(d.sizes(), vec![0, 5]);
        assert!(d.stratum(1).iter().all(|s| s.logger == 1));
    }

    #[test]
    fn deterministic_point_mass_samples_are_degenerate() {
        let env = DiscreteEnvironment::with_one_hot_contexts(
            vec![1.0],
            vec![vec![0.3, 0.9]],
            RewardModel::Deterministic,
        )
        .unwrap();
        let logger: Arc<dyn Policy> = Arc::new(FixedPolicy::point_mass(2, 1));
        let d = sample_stratified(&env, &[logger], &[20], 9).unwrap();
        let first = d.stratum(0)[0].clone();
        assert!(d.iter().all(|s| *s == first));
        assert_eq!(first.reward, 0.9);
    }

    #[test]
    fn stratified_mean_reward_matches_enumeration() {
        let env = DiscreteEnvironment::toy();
        let d = sample_stratified(&env, &[uniform2(), uniform2()], &[1000, 1000], 42).unwrap();
        let mean = d.iter().map(|s| s.reward).sum::<f64>() / 2000.0;
        // Rewards are Bernoulli(0.5) marginally.
        let se = (0.25f64 / 2000.0).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn mixture_degenerate_rho() {
        let env = DiscreteEnvironment::toy();
        let d = sample_iid_mixture(&env, &[uniform2(), uniform2()], &[1.0, 0.0], 50, 3).unwrap();
        assert_eq!(d.sizes(), vec![50, 0]);
    }

    #[test]
    fn mixture_counts_are_binomial() {
        let env = DiscreteEnvironment::toy();
        let d = sample_iid_mixture(&env, &[uniform2(), uniform2()], &[0.3, 0.7], 10_000, 8).unwrap();
        let n1 = d.sizes()[0] as f64;
        assert!((n1 - 3000.0).abs() < 3.0 * (10_000.0f64 * 0.21).sqrt(), "{n1}");
        assert_eq!(d.len(), 10_000);
    }

    #[test]
    fn mixture_is_reproducible() {
        let env = DiscreteEnvironment::toy();
        let a = sample_iid_mixture(&env, &[uniform2(), uniform2()], &[0.3, 0.7], 100, 8).unwrap();
        let b = sample_iid_mixture(&env, &[uniform2(), uniform2()], &[0.3, 0.7], 100, 8).unwrap();
        assert_eq!(a, b);
        assert!(sample_iid_mixture(&env, &[uniform2()], &[1.0], 0, 8).unwrap().is_empty());
    }

    #[test]
    fn value_invariant_under_action_relabelling() {
        let env = DiscreteEnvironment::with_one_hot_contexts(
            vec![0.2, 0.3, 0.5],
            vec![vec![0.1, 0.5, 0.9], vec![0.3, 0.2, 0.6], vec![0.7, 0.4, 0.0]],
            RewardModel::default(),
        )
        .unwrap();
        let table = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3], vec![0.0, 0.5, 0.5]];
        let pi = TabularPolicy::new(table.clone()).unwrap();
        let perm = [2, 0, 1];
        let permuted_env = env.permute_actions(&perm).unwrap();
        let permuted_pi = TabularPolicy::new(
            table
                .iter()
                .map(|row| perm.iter().map(|&a| row[a]).collect())
                .collect(),
        )
        .unwrap();
        let j = policy_value_exact(&env, &pi).unwrap();
        let jp = policy_value_exact(&permuted_env, &permuted_pi).unwrap();
        assert!((j - jp).abs() < 1e-15);
    }
}
