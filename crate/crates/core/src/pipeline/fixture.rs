use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Context, LoggedSample};
use crate::error::{OpeError, Result};
use crate::nuisance::{fit_behavior, FitConfig};
use crate::policy::{GreedyPolicy, LinearScorer};
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::ClassificationDataset;

/// Gaussian class clusters: centres drawn from `N(0, separation²)` per
/// coordinate, points from `N(centre, 1)`, labels uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            dim: 2,
            n: 1000,
            separation: 1.5,
            seed: 0,
        }
    }
}

pub fn synthetic_fixture(spec: &FixtureSpec) -> Result<ClassificationDataset> {
    if spec.num_classes < 2 || spec.n == 0 {
        return Err(OpeError::InvalidArgument(format!(
            "fixture needs at least 2 classes and 1 row, got {} and {}",
            spec.num_classes, spec.n
        )));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(OpeError::InvalidArgument("separation must be nonnegative".into()));
    }
    let mut rng = rng_from_seed(derive_seed(spec.seed, &[stream::FIXTURE]));
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let centres: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..spec.dim).map(|_| spec.separation * unit.sample(&mut rng)).collect())
        .collect();
    let mut features = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y = rng.gen_range(0..spec.num_classes);
        features.push(centres[y].iter().map(|c| c + unit.sample(&mut rng)).collect());
        labels.push(y);
    }
    ClassificationDataset::new(features, labels, spec.num_classes)
}

/// Disjoint training and evaluation rows.
#[derive(Debug, Clone)]
pub struct ExperimentSplit {
    pub train: ClassificationDataset,
    pub eval: ClassificationDataset,
    pub seed: u64,
}

/// Random split with `round(n · train_fraction)` training rows.
pub fn split_train_eval(data: &ClassificationDataset, train_fraction: f64, seed: u64) -> Result<ExperimentSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(OpeError::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(OpeError::InsufficientData(format!("{n} rows cannot be split {train_fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, &[stream::SPLIT])));
    Ok(ExperimentSplit {
        train: data.subset(&order[..n_train]),
        eval: data.subset(&order[n_train..]),
        seed,
    })
}

/// Multinomial logistic regression of label on features, used greedily.
pub fn train_det_policy(train: &ClassificationDataset, config: &FitConfig) -> Result<GreedyPolicy> {
    let samples: Vec<LoggedSample> = train
        .features()
        .iter()
        .zip(train.labels())
        .enumerate()
        .map(|(i, (x, &y))| LoggedSample {
            logger: 0,
            context: Context::new(i, x.clone()),
            action: y,
            reward: 0.0,
        })
        .collect();
    let model = fit_behavior(&samples, train.num_classes(), config)?;
    Ok(GreedyPolicy::new(LinearScorer::new(model.weights().to_vec())?))
}

/// Fraction of rows whose greedy action equals the label.
pub fn accuracy(policy: &GreedyPolicy, data: &ClassificationDataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let hits = data
        .features()
        .iter()
        .zip(data.labels())
        .filter(|(x, &y)| policy.greedy_action(x) == y)
        .count();
    hits as f64 / data.len() as f64
}
