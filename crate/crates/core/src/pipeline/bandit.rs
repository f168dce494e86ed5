use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::data::{Context, LoggedSample, StratifiedDataset};
use crate::error::{OpeError, Result};
use crate::policy::{MixturePolicy, Policy};
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::ClassificationDataset;

/// Weight on the deterministic policy in `(π_e, π_1, π_2)`; the rest is uniform.
pub const DET_MIXTURE_WEIGHTS: [f64; 3] = [1.0, 0.95, 0.05];

/// Logs one bandit round per row: `a ~ π(·|s)`, `r = 1{a = y}`.
///
/// Context ids are row indices; labels are not kept.
pub fn classification_to_bandit(
    data: &ClassificationDataset,
    policy: &dyn Policy,
    logger: usize,
    seed: u64,
) -> Result<Vec<LoggedSample>> {
    if policy.num_actions() != data.num_classes() {
        return Err(OpeError::InvalidPolicy(format!(
            "policy has {} actions, data has {} classes",
            policy.num_actions(),
            data.num_classes()
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok(data
        .features()
        .iter()
        .zip(data.labels())
        .enumerate()
        .map(|(i, (x, &y))| {
            let context = Context::new(i, x.clone());
            let action = policy.sample_action(&context, &mut rng);
            LoggedSample {
                logger,
                context,
                action,
                reward: if action == y { 1.0 } else { 0.0 },
            }
        })
        .collect())
}

/// The evaluation policy and the two logging policies.
#[derive(Debug, Clone)]
pub struct PolicySuite {
    pub pi_e: Arc<dyn Policy>,
    pub pi_1: Arc<dyn Policy>,
    pub pi_2: Arc<dyn Policy>,
}

impl PolicySuite {
    pub fn loggers(&self) -> Vec<Arc<dyn Policy>> {
        vec![self.pi_1.clone(), self.pi_2.clone()]
    }
}

pub fn build_policy_suite(det: Arc<dyn Policy>) -> Result<PolicySuite> {
    let mix = |alpha: f64| -> Result<Arc<dyn Policy>> { Ok(Arc::new(MixturePolicy::new(alpha, det.clone())?)) };
    let [e, one, two] = DET_MIXTURE_WEIGHTS;
    Ok(PolicySuite {
        pi_e: mix(e)?,
        pi_1: mix(one)?,
        pi_2: mix(two)?,
    })
}

/// `n_1 = ⌊n·ratio/(1+ratio) + 1/2⌋`, `n_2 = n − n_1`.
pub fn stratum_sizes_for_ratio(n: usize, ratio: f64) -> Result<[usize; 2]> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(OpeError::InvalidArgument(format!("ratio must be positive, got {ratio}")));
    }
    let n1 = (n as f64 * ratio / (1.0 + ratio) + 0.5).floor() as usize;
    let n1 = n1.min(n);
    if n1 == 0 || n1 == n {
        return Err(OpeError::InsufficientData(format!(
            "ratio {ratio} on {n} rows leaves a stratum empty"
        )));
    }
    Ok([n1, n - n1])
}

/// Randomly partitions the evaluation rows into `𝒟_1` (logged by `π_1`) and
/// `𝒟_2` (logged by `π_2`) with `n_1/n_2 ≈ ratio`.
pub fn partition_eval_by_ratio(
    eval: &ClassificationDataset,
    ratio: f64,
    pi_1: &dyn Policy,
    pi_2: &dyn Policy,
    seed: u64,
) -> Result<StratifiedDataset> {
    let [n1, _] = stratum_sizes_for_ratio(eval.len(), ratio)?;
    let mut order: Vec<usize> = (0..eval.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, &[stream::PARTITION])));
    let parts = [&order[..n1], &order[n1..]];
    let mut strata = Vec::with_capacity(2);
    for (k, (rows, policy)) in parts.into_iter().zip([pi_1, pi_2]).enumerate() {
        let subset = eval.subset(rows);
        let mut logged =
            classification_to_bandit(&subset, policy, k, derive_seed(seed, &[stream::ACTIONS, k as u64]))?;
        // Keep the evaluation-set row index as the context id.
        for (s, &row) in logged.iter_mut().zip(rows) {
            s.context.id = row;
        }
        strata.push(logged);
    }
    StratifiedDataset::new(strata)
}
