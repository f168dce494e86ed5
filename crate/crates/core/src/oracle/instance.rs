use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{proportions, Context};
use crate::env::{policy_value_exact, DiscreteEnvironment, RewardModel};
use crate::error::{OpeError, Result};
use crate::estimators::{TabularControl, WeightFunction};
use crate::policy::{marginal_policy, Policy, TabularPolicy};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// `h(k, s, a)` looked up by logger, context id and action.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularWeight {
    pub table: Vec<Vec<Vec<f64>>>,
}

impl WeightFunction for TabularWeight {
    fn weight(&self, logger: usize, ctx: &Context, action: usize) -> f64 {
        self.table[logger][ctx.id][action]
    }
}

/// A small finite problem: environment, tabular loggers, evaluation policy
/// and stratum sizes.
#[derive(Debug, Clone)]
pub struct FiniteInstance {
    pub env: DiscreteEnvironment,
    pub loggers: Vec<Arc<dyn Policy>>,
    pub pi_e: Arc<dyn Policy>,
    pub sizes: Vec<usize>,
    record: InstanceRecord,
}

/// Plain description of a [`FiniteInstance`] for fixtures and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub context_probs: Vec<f64>,
    /// Mean rewards `q[s][a]`.
    pub q: Vec<Vec<f64>>,
    /// Rewards are Bernoulli on `{0, r_max}`.
    pub r_max: f64,
    /// `loggers[k][s][a]`.
    pub loggers: Vec<Vec<Vec<f64>>>,
    pub pi_e: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
}

fn random_simplex<R: Rng>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(floor..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

impl FiniteInstance {
    pub fn from_record(record: InstanceRecord) -> Result<Self> {
        if record.loggers.len() != record.sizes.len() {
            return Err(OpeError::LengthMismatch {
                expected: record.loggers.len(),
                got: record.sizes.len(),
            });
        }
        let env = DiscreteEnvironment::with_one_hot_contexts(
            record.context_probs.clone(),
            record.q.clone(),
            RewardModel::Bernoulli { r_max: record.r_max },
        )?;
        let loggers = record
            .loggers
            .iter()
            .map(|t| Ok(Arc::new(TabularPolicy::new(t.clone())?) as Arc<dyn Policy>))
            .collect::<Result<_>>()?;
        let pi_e = Arc::new(TabularPolicy::new(record.pi_e.clone())?);
        Ok(Self {
            env,
            loggers,
            pi_e,
            sizes: record.sizes.clone(),
            record,
        })
    }

    /// Draws an instance with at most 3 contexts, 2–3 actions and 2–3
    /// full-support loggers. The evaluation policy may put zero mass on
    /// some actions.
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::FIXTURE]));
        let m = rng.gen_range(1..=3);
        let a = rng.gen_range(2..=3);
        let k = rng.gen_range(2..=3);
        let r_max = if rng.gen_bool(0.5) { 1.0 } else { 2.0 };
        let q = (0..m)
            .map(|_| (0..a).map(|_| r_max * rng.gen_range(0.0..1.0)).collect())
            .collect();
        let loggers = (0..k)
            .map(|_| (0..m).map(|_| random_simplex(&mut rng, a, 0.05)).collect())
            .collect();
        let pi_e = (0..m)
            .map(|_| {
                let mut row: Vec<f64> = (0..a)
                    .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.05..1.0) })
                    .collect();
                if row.iter().all(|v| *v == 0.0) {
                    row[rng.gen_range(0..a)] = 1.0;
                }
                let total: f64 = row.iter().sum();
                row.into_iter().map(|v| v / total).collect()
            })
            .collect();
        let record = InstanceRecord {
            context_probs: random_simplex(&mut rng, m, 0.1),
            q,
            r_max,
            loggers,
            pi_e,
            sizes: (0..k).map(|_| rng.gen_range(1..=12)).collect(),
        };
        Self::from_record(record).expect("generated instance is valid")
    }

    pub fn record(&self) -> &InstanceRecord {
        &self.record
    }

    pub fn num_strata(&self) -> usize {
        self.loggers.len()
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn rho(&self) -> Vec<f64> {
        proportions(&self.sizes)
    }

    pub fn pi_star(&self) -> Arc<dyn Policy> {
        marginal_policy(&self.loggers, &self.rho()).expect("loggers and sizes agree")
    }

    pub fn value(&self) -> f64 {
        policy_value_exact(&self.env, self.pi_e.as_ref()).expect("instance is valid")
    }

    /// A random `h` satisfying `Σ_k n_k π_k(a|s) h(k,s,a) = n` everywhere:
    /// `h_k = c_k n / Σ_j n_j π_j c_j` for random positive `c`.
    pub fn random_constraint_weights<R: Rng>(&self, rng: &mut R) -> TabularWeight {
        let (m, a, k) = (self.env.num_contexts(), self.env.num_actions(), self.num_strata());
        let n = self.n() as f64;
        let mut table = vec![vec![vec![0.0; a]; m]; k];
        for s in 0..m {
            for b in 0..a {
                let c: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
                let denom: f64 = (0..k)
                    .map(|j| self.sizes[j] as f64 * self.record.loggers[j][s][b] * c[j])
                    .sum();
                for j in 0..k {
                    table[j][s][b] = c[j] * n / denom;
                }
            }
        }
        TabularWeight { table }
    }

    /// A random control variate with values in `[−R_max, 2 R_max]`.
    pub fn random_control<R: Rng>(&self, rng: &mut R) -> TabularControl {
        let r = self.record.r_max;
        TabularControl {
            table: (0..self.env.num_contexts())
                .map(|_| (0..self.env.num_actions()).map(|_| rng.gen_range(-r..2.0 * r)).collect())
                .collect(),
        }
    }

    /// `g = q`.
    pub fn true_control(&self) -> TabularControl {
        TabularControl {
            table: self.env.q_table().to_vec(),
        }
    }
}
