use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::StratifiedDataset;
use crate::error::{OpeError, Result};
use crate::estimators::{
    dr_pw_weight, gamma_sum, ControlVariate, FlooredInverse, FoldPlan, PwConfig, ScaledInverseLogger, WeightFunction,
    ZeroControl,
};
use crate::nuisance::{fit_behavior, fit_q, Link};
use crate::pipeline::{
    accuracy, build_policy_suite, load_csv_dataset, partition_eval_by_ratio, split_train_eval, synthetic_fixture,
    train_det_policy, ClassificationDataset, PolicySuite,
};
use crate::policy::{marginal_policy, Policy};
use crate::rng::{derive_seed, stream};
use crate::variance::{fit_control_variate, QClass, VarianceObjectiveKind};

use super::config::{DataSource, EstimatorKind, ExperimentConfig, Propensities};
use super::{relative_rmse, relative_rmse_se};

/// One `(estimator, ratio)` cell of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: String,
    pub ratio: f64,
    /// NaN when every replication failed.
    pub relative_rmse: f64,
    pub rmse_se: f64,
    /// Number of successful replications.
    pub m: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub estimator: String,
    pub ratio: f64,
    pub replication: usize,
    pub error: String,
}

/// What an injected estimator sees in each replication.
pub struct ReplicationInput<'a> {
    pub data: &'a StratifiedDataset,
    pub suite: &'a PolicySuite,
    pub truth: f64,
    pub seed: u64,
}

type ExtraFn = dyn Fn(&ReplicationInput<'_>) -> Result<f64> + Send + Sync;

/// A caller-supplied estimator run alongside the built-in ones.
#[derive(Clone)]
pub struct ExtraEstimator {
    pub name: String,
    pub estimate: Arc<ExtraFn>,
}

impl ExtraEstimator {
    pub fn new(name: &str, f: impl Fn(&ReplicationInput<'_>) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self {
            name: name.to_string(),
            estimate: Arc::new(f),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub truth: f64,
    pub eval_size: usize,
    pub train_size: usize,
    pub num_classes: usize,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailedCell>,
    /// `estimates[name][ratio index][replication]`, NaN for failures.
    pub estimates: BTreeMap<String, Vec<Vec<f64>>>,
    /// Seed of every replication, `[ratio index][replication]`.
    pub replication_seeds: Vec<Vec<u64>>,
    pub ratios: Vec<f64>,
    pub total_wall_ms: f64,
}

impl BenchmarkReport {
    /// Estimators that failed in every replication of some ratio.
    pub fn totally_failed(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.m == 0)
            .map(|r| r.estimator.clone())
            .collect();
        out.dedup();
        out
    }

    pub fn row(&self, estimator: &str, ratio: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.ratio == ratio)
    }

    /// Successful estimates of one cell.
    pub fn cell(&self, estimator: &str, ratio_index: usize) -> Vec<f64> {
        self.estimates
            .get(estimator)
            .map(|v| v[ratio_index].iter().copied().filter(|e| e.is_finite()).collect())
            .unwrap_or_default()
    }
}

fn load_data(source: &DataSource) -> Result<ClassificationDataset> {
    match source {
        DataSource::Fixture(spec) => synthetic_fixture(spec),
        DataSource::Csv {
            path,
            label,
            has_header,
        } => load_csv_dataset(path, label, *has_header),
    }
}

type Shared<T> = std::result::Result<T, String>;

/// Nuisances fit once per fold and shared by every estimator.
struct FoldNuisances {
    pooled: Shared<Arc<dyn Policy>>,
    strata: Shared<Vec<Arc<dyn Policy>>>,
    q: Shared<Arc<dyn ControlVariate>>,
    /// Time spent fitting each shared nuisance.
    ms: [f64; 3],
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1e3)
}

fn fit_fold(
    config: &ExperimentConfig,
    kinds: &[EstimatorKind],
    train: &StratifiedDataset,
    suite: &PolicySuite,
    known_pooled: &Arc<dyn Policy>,
    num_actions: usize,
) -> FoldNuisances {
    let msg = |e: OpeError| e.to_string();
    let known = config.propensities == Propensities::Known;
    let fit = &config.nuisance_fit;

    let (pooled, t0) = timed(|| {
        if !kinds.iter().any(EstimatorKind::needs_pooled_propensity) {
            Err("not needed".to_string())
        } else if known {
            Ok(known_pooled.clone())
        } else {
            fit_behavior(train.iter(), num_actions, fit)
                .map(|m| Arc::new(m) as Arc<dyn Policy>)
                .map_err(msg)
        }
    });
    let (strata, t1) = timed(|| {
        if !kinds.iter().any(EstimatorKind::needs_stratum_propensities) {
            Err("not needed".to_string())
        } else if known {
            Ok(suite.loggers())
        } else {
            (0..train.num_strata())
                .map(|k| {
                    fit_behavior(train.stratum(k), num_actions, fit)
                        .map(|m| Arc::new(m) as Arc<dyn Policy>)
                        .map_err(|e| format!("stratum {k}: {e}"))
                })
                .collect()
        }
    });
    let (q, t2) = timed(|| {
        if !kinds.iter().any(EstimatorKind::needs_q) {
            Err("not needed".to_string())
        } else {
            fit_q(train.iter(), num_actions, Link::binary(), fit)
                .map(|m| Arc::new(m) as Arc<dyn ControlVariate>)
                .map_err(msg)
        }
    });
    FoldNuisances {
        pooled,
        strata,
        q,
        ms: [t0, t1, t2],
    }
}

/// `(h, g)` for one estimator on one fold, and the shared fit time it used.
fn fold_pair(
    kind: EstimatorKind,
    config: &ExperimentConfig,
    nuisances: &FoldNuisances,
    train: &StratifiedDataset,
    eval_sizes: &[usize],
    pi_e: &dyn Policy,
    seed: u64,
) -> Shared<(Arc<dyn WeightFunction>, Arc<dyn ControlVariate>, f64)> {
    let floor = if config.propensities == Propensities::Known {
        0.0
    } else {
        config.propensity_floor
    };
    let zero: Arc<dyn ControlVariate> = Arc::new(ZeroControl);
    let pooled_h = || -> Shared<FlooredInverse> {
        Ok(FlooredInverse {
            policy: nuisances.pooled.clone()?,
            floor,
        })
    };
    let unit_h = || -> Shared<ScaledInverseLogger> {
        let loggers = nuisances.strata.clone()?;
        Ok(ScaledInverseLogger {
            scale: vec![1.0; loggers.len()],
            loggers,
            floor,
        })
    };
    let [t_pooled, t_strata, t_q] = nuisances.ms;
    let pw = |g: &dyn ControlVariate| -> Shared<ScaledInverseLogger> {
        dr_pw_weight(train, eval_sizes, pi_e, &nuisances.strata.clone()?, g, floor, PwConfig::default())
            .map_err(|e| e.to_string())
    };
    Ok(match kind {
        EstimatorKind::Is => (Arc::new(pooled_h()?), zero, t_pooled),
        EstimatorKind::IsAvg => (Arc::new(unit_h()?), zero, t_strata),
        EstimatorKind::IsPw => (Arc::new(pw(&ZeroControl)?), zero, t_strata),
        EstimatorKind::Dr => (Arc::new(pooled_h()?), nuisances.q.clone()?, t_pooled + t_q),
        EstimatorKind::DrAvg => (Arc::new(unit_h()?), nuisances.q.clone()?, t_strata + t_q),
        EstimatorKind::DrPw => {
            let q = nuisances.q.clone()?;
            (Arc::new(pw(q.as_ref())?), q, t_strata + t_q)
        }
        EstimatorKind::Smrdr | EstimatorKind::Mrdr => {
            let objective = if kind == EstimatorKind::Smrdr {
                VarianceObjectiveKind::Stratified
            } else {
                VarianceObjectiveKind::Iid
            };
            let h = pooled_h()?;
            let fit = crate::nuisance::FitConfig {
                seed: derive_seed(seed, &[stream::STARTS]),
                ..config.control_variate_fit
            };
            let g = fit_control_variate(
                train,
                objective,
                QClass::Logistic { r_max: 1.0 },
                pi_e,
                &h,
                &fit,
                config.control_variate_starts,
            )
            .map_err(|e| e.to_string())?;
            (Arc::new(h), Arc::new(g), t_pooled)
        }
    })
}

struct ReplicationResult {
    /// Per built-in estimator then per extra: estimate or error, and wall ms.
    outcomes: Vec<(Shared<f64>, f64)>,
}

fn run_replication(
    config: &ExperimentConfig,
    eval: &ClassificationDataset,
    suite: &PolicySuite,
    truth: f64,
    ratio: f64,
    seed: u64,
    extras: &[ExtraEstimator],
) -> ReplicationResult {
    let kinds = &config.estimators;
    let fail_all = |e: String| ReplicationResult {
        outcomes: (0..kinds.len() + extras.len()).map(|_| (Err(e.clone()), 0.0)).collect(),
    };
    let data = match partition_eval_by_ratio(eval, ratio, suite.pi_1.as_ref(), suite.pi_2.as_ref(), seed) {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let pi_e = suite.pi_e.as_ref();
    let mut outcomes: Vec<(Shared<f64>, f64)> = Vec::with_capacity(kinds.len() + extras.len());

    if !kinds.is_empty() {
        let plan = match FoldPlan::new(&data.sizes(), config.folds, derive_seed(seed, &[stream::FOLDS])) {
            Ok(p) => p,
            Err(e) => return fail_all(e.to_string()),
        };
        let known_pooled = match marginal_policy(&suite.loggers(), &data.proportions()) {
            Ok(p) => p,
            Err(e) => return fail_all(e.to_string()),
        };
        let mut sums = vec![Ok((0.0, 0usize)); kinds.len()];
        let mut ms = vec![0.0; kinds.len()];
        for (z, (train, held)) in plan.splits(&data).into_iter().enumerate() {
            if held.is_empty() {
                continue;
            }
            let nuisances = fit_fold(config, kinds, &train, suite, &known_pooled, eval.num_classes());
            let eval_sizes = held.sizes();
            for (i, &kind) in kinds.iter().enumerate() {
                if sums[i].is_err() {
                    continue;
                }
                let fold_seed = derive_seed(seed, &[stream::FOLDS, z as u64, i as u64]);
                let t = Instant::now();
                let step = fold_pair(kind, config, &nuisances, &train, &eval_sizes, pi_e, fold_seed).and_then(
                    |(h, g, shared_ms)| {
                        let (s, n) = gamma_sum(&held, h.as_ref(), g.as_ref(), pi_e).map_err(|e| e.to_string())?;
                        Ok((s, n, shared_ms))
                    },
                );
                ms[i] += t.elapsed().as_secs_f64() * 1e3;
                match step {
                    Ok((s, n, shared_ms)) => {
                        ms[i] += shared_ms;
                        if let Ok((total, count)) = &mut sums[i] {
                            *total += s;
                            *count += n;
                        }
                    }
                    Err(e) => sums[i] = Err(format!("fold {z}: {e}")),
                }
            }
        }
        for (s, t) in sums.into_iter().zip(ms) {
            let est = s.and_then(|(total, count)| {
                if count == 0 {
                    Err("no evaluation samples".to_string())
                } else {
                    Ok(total / count as f64)
                }
            });
            let est = est.and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("non-finite estimate {v}")) });
            outcomes.push((est, t));
        }
    }

    for extra in extras {
        let input = ReplicationInput {
            data: &data,
            suite,
            truth,
            seed,
        };
        let (r, t) = timed(|| (extra.estimate)(&input).map_err(|e| e.to_string()));
        outcomes.push((r, t));
    }
    ReplicationResult { outcomes }
}

/// Runs the full benchmark protocol described by `config`.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<BenchmarkReport> {
    run_benchmark_with(config, &[])
}

/// As [`run_benchmark`], with additional caller-supplied estimators.
pub fn run_benchmark_with(config: &ExperimentConfig, extras: &[ExtraEstimator]) -> Result<BenchmarkReport> {
    config.validate()?;
    let start = Instant::now();
    let data = load_data(&config.data)?;
    let split = split_train_eval(&data, config.train_fraction, config.seed)?;
    let det = Arc::new(train_det_policy(&split.train, &config.policy_fit)?);
    let truth = accuracy(&det, &split.eval);
    log::info!(
        "train {} rows, eval {} rows, {} classes, J = {truth}",
        split.train.len(),
        split.eval.len(),
        data.num_classes()
    );
    if truth == 0.0 {
        return Err(OpeError::InsufficientData(
            "the evaluation policy has zero accuracy, so relative RMSE is undefined".into(),
        ));
    }
    let suite = build_policy_suite(det)?;

    let names: Vec<String> = config
        .estimators
        .iter()
        .map(|k| k.name().to_string())
        .chain(extras.iter().map(|e| e.name.clone()))
        .collect();
    let m = config.replications;
    let seeds: Vec<Vec<u64>> = (0..config.ratios.len())
        .map(|j| {
            (0..m)
                .map(|r| derive_seed(config.seed, &[stream::REPLICATION, j as u64, r as u64]))
                .collect()
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..config.ratios.len())
        .flat_map(|j| (0..m).map(move |r| (j, r)))
        .collect();
    let results: Vec<ReplicationResult> = jobs
        .par_iter()
        .map(|&(j, r)| run_replication(config, &split.eval, &suite, truth, config.ratios[j], seeds[j][r], extras))
        .collect();

    let mut estimates: BTreeMap<String, Vec<Vec<f64>>> = names
        .iter()
        .map(|n| (n.clone(), vec![vec![f64::NAN; m]; config.ratios.len()]))
        .collect();
    let mut wall = vec![vec![0.0; config.ratios.len()]; names.len()];
    let mut failures = Vec::new();
    for (&(j, r), res) in jobs.iter().zip(&results) {
        for (i, (outcome, ms)) in res.outcomes.iter().enumerate() {
            wall[i][j] += ms;
            match outcome {
                Ok(v) => estimates.get_mut(&names[i]).expect("name registered")[j][r] = *v,
                Err(e) => failures.push(FailedCell {
                    estimator: names[i].clone(),
                    ratio: config.ratios[j],
                    replication: r,
                    error: e.clone(),
                }),
            }
        }
    }

    let mut rows = Vec::with_capacity(names.len() * config.ratios.len());
    for (j, &ratio) in config.ratios.iter().enumerate() {
        for (i, name) in names.iter().enumerate() {
            let ok: Vec<f64> = estimates[name][j].iter().copied().filter(|v| v.is_finite()).collect();
            let (rmse, se) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (relative_rmse(truth, &ok)?, relative_rmse_se(truth, &ok)?)
            };
            rows.push(ResultRow {
                estimator: name.clone(),
                ratio,
                relative_rmse: rmse,
                rmse_se: se,
                m: ok.len(),
                wall_ms: wall[i][j],
            });
        }
    }
    for f in failures.iter().take(5) {
        log::warn!("{} failed at ratio {} replication {}: {}", f.estimator, f.ratio, f.replication, f.error);
    }
    Ok(BenchmarkReport {
        truth,
        eval_size: split.eval.len(),
        train_size: split.train.len(),
        num_classes: data.num_classes(),
        rows,
        failures,
        estimates,
        replication_seeds: seeds,
        ratios: config.ratios.clone(),
        total_wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
