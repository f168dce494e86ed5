use std::sync::Arc;

use crate::data::{Context, LoggedSample, StratifiedDataset};
use crate::error::{OpeError, Result};
use crate::estimators::BehaviorFitter;
use crate::policy::{affine, LinearScorer, LinearSoftmaxPolicy, MatrixRecord, Policy};

use super::{
    add_outer, add_ridge, add_ridge_hessian, damped_newton, feature_dim, group_by_features, FitConfig, Solver, Standardizer,
};

/// Multinomial-logit estimate of the pooled logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    policy: LinearSoftmaxPolicy,
}

impl BehaviorModel {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self {
            policy: LinearSoftmaxPolicy::new(LinearScorer::new(weights)?, 1.0)?,
        })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        self.policy.scorer().weights()
    }

    pub fn to_record(&self) -> MatrixRecord {
        MatrixRecord::new("behavior", 1.0, self.weights().to_vec())
    }

    pub fn from_record(record: &MatrixRecord) -> Result<Self> {
        record.expect_tag("behavior")?;
        Self::new(record.rows.clone())
    }
}

impl Policy for BehaviorModel {
    fn num_actions(&self) -> usize {
        self.policy.num_actions()
    }

    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]) {
        self.policy.fill_probabilities(ctx, out)
    }
}

/// Mean multinomial log-loss and its gradient over grouped rows.
///
/// `w` is the row-major `A × (d+1)` weight matrix; `counts[g][b]` is how often
/// action `b` was logged with features `xs[g]`.
/// Mean multinomial log-loss with ridge, its gradient and, when `hess` is
/// given, its Hessian.
fn loss_grad(
    xs: &[Vec<f64>],
    counts: &[Vec<f64>],
    w: &[f64],
    num_actions: usize,
    l2: f64,
    grad: &mut [f64],
    mut hess: Option<&mut [f64]>,
) -> f64 {
    let width = w.len() / num_actions;
    let p = w.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    if let Some(h) = hess.as_deref_mut() {
        h.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut z = vec![0.0; num_actions];
    let mut loss = 0.0;
    let mut n = 0.0;
    for (x, c) in xs.iter().zip(counts) {
        let total: f64 = c.iter().sum();
        n += total;
        for (b, zb) in z.iter_mut().enumerate() {
            *zb = affine(&w[b * width..(b + 1) * width], x);
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let linear: f64 = c.iter().zip(&z).map(|(cb, zb)| cb * zb).sum();
        let mut sum = 0.0;
        for zb in z.iter_mut() {
            *zb = (*zb - max).exp();
            sum += *zb;
        }
        loss += total * (max + sum.ln()) - linear;
        z.iter_mut().for_each(|v| *v /= sum);
        for b in 0..num_actions {
            let resid = total * z[b] - c[b];
            let row = &mut grad[b * width..(b + 1) * width];
            row[0] += resid;
            for (g, v) in row[1..].iter_mut().zip(x) {
                *g += resid * v;
            }
        }
        if let Some(h) = hess.as_deref_mut() {
            for b in 0..num_actions {
                for e in 0..num_actions {
                    let own = if b == e { z[b] } else { 0.0 };
                    let cov = total * (own - z[b] * z[e]);
                    if cov != 0.0 {
                        add_outer(h, p, b * width, e * width, x, cov);
                    }
                }
            }
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    if let Some(h) = hess {
        h.iter_mut().for_each(|v| *v /= n);
        for b in 0..num_actions {
            add_ridge_hessian(h, p, b * width, width, l2);
        }
    }
    for b in 0..num_actions {
        let range = b * width..(b + 1) * width;
        add_ridge(&w[range.clone()], l2, &mut loss, &mut grad[range]);
    }
    loss
}

/// The training objective of [`fit_behavior`] at raw-feature weights `w`
/// (row-major, one `[bias, slopes…]` row per action), with its gradient.
pub fn behavior_objective<'a>(
    samples: impl IntoIterator<Item = &'a LoggedSample>,
    num_actions: usize,
    l2_penalty: f64,
    w: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let samples: Vec<&LoggedSample> = samples.into_iter().collect();
    if samples.is_empty() || num_actions == 0 {
        return Err(OpeError::InsufficientData("behavior objective needs samples and actions".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.action >= num_actions) {
        return Err(OpeError::InvalidArgument(format!("action {} outside 0..{num_actions}", s.action)));
    }
    let dim = feature_dim(samples.iter().copied())?.unwrap_or(0);
    if w.len() != num_actions * (dim + 1) {
        return Err(OpeError::LengthMismatch {
            expected: num_actions * (dim + 1),
            got: w.len(),
        });
    }
    let groups = group_by_features(samples.iter().copied(), |c: &mut Vec<f64>, s| {
        if c.is_empty() {
            c.resize(num_actions, 0.0);
        }
        c[s.action] += 1.0;
    });
    let xs: Vec<Vec<f64>> = groups.features.iter().map(|x| x.to_vec()).collect();
    let mut grad = vec![0.0; w.len()];
    let loss = loss_grad(&xs, &groups.stats, w, num_actions, l2_penalty, &mut grad, None);
    Ok((loss, grad))
}

/// Fits the behavior model and returns the loss after every step.
pub fn fit_behavior_traced<'a>(
    samples: impl IntoIterator<Item = &'a LoggedSample>,
    num_actions: usize,
    config: &FitConfig,
) -> Result<(BehaviorModel, Vec<f64>)> {
    config.validate()?;
    let samples: Vec<&LoggedSample> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(OpeError::InsufficientData("behavior fit needs at least one sample".into()));
    }
    if num_actions == 0 {
        return Err(OpeError::InvalidArgument("behavior model needs at least one action".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.action >= num_actions) {
        return Err(OpeError::InvalidArgument(format!("action {} outside 0..{num_actions}", s.action)));
    }
    let dim = feature_dim(samples.iter().copied())?.unwrap_or(0);
    let groups = group_by_features(samples.iter().copied(), |c: &mut Vec<f64>, s| {
        if c.is_empty() {
            c.resize(num_actions, 0.0);
        }
        c[s.action] += 1.0;
    });
    let st = Standardizer::fit(&groups, dim, |c| c.iter().sum(), config.standardize);
    let xs: Vec<Vec<f64>> = groups.features.iter().map(|x| st.apply(x)).collect();

    let width = dim + 1;
    let l2 = config.l2_penalty;
    let (w, trace) = match config.solver {
        Solver::Gradient => {
            let mut w = vec![0.0; num_actions * width];
            let mut grad = vec![0.0; w.len()];
            let mut trace = Vec::with_capacity(config.iterations + 1);
            for _ in 0..config.iterations {
                trace.push(loss_grad(&xs, &groups.stats, &w, num_actions, l2, &mut grad, None));
                for (wj, gj) in w.iter_mut().zip(&grad) {
                    *wj -= config.learning_rate * gj;
                }
            }
            trace.push(loss_grad(&xs, &groups.stats, &w, num_actions, l2, &mut grad, None));
            (w, trace)
        }
        Solver::Newton => damped_newton(vec![0.0; num_actions * width], config.iterations, |w, g, h| {
            loss_grad(&xs, &groups.stats, w, num_actions, l2, g, Some(h))
        }),
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(OpeError::NonFinite("behavior-model weights".into()));
    }
    let rows = w
        .chunks(width)
        .map(|r| {
            let mut r = r.to_vec();
            st.unfold(&mut r);
            r
        })
        .collect();
    Ok((BehaviorModel::new(rows)?, trace))
}

/// Multinomial logistic regression of action on context over all samples.
///
/// Fed the pooled strata, this estimates the marginal logging policy `π_*`.
pub fn fit_behavior<'a>(
    samples: impl IntoIterator<Item = &'a LoggedSample>,
    num_actions: usize,
    config: &FitConfig,
) -> Result<BehaviorModel> {
    fit_behavior_traced(samples, num_actions, config).map(|(m, _)| m)
}

/// [`BehaviorFitter`] over the pooled training strata.
#[derive(Debug, Clone)]
pub struct LogisticBehaviorFitter {
    pub num_actions: usize,
    pub config: FitConfig,
}

impl BehaviorFitter for LogisticBehaviorFitter {
    fn fit_behavior(&self, train: &StratifiedDataset) -> Result<Arc<dyn Policy>> {
        Ok(Arc::new(fit_behavior(train.iter(), self.num_actions, &self.config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_stratified, DiscreteEnvironment};
    use crate::nuisance::testing::gradient_error;
    use crate::policy::{marginal_policy, FixedPolicy, UniformPolicy};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn tv(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Forty contexts with two Gaussian features.
    fn continuous_env(seed: u64) -> DiscreteEnvironment {
        let mut rng = rng_from_seed(seed);
        let m = 40;
        let contexts = (0..m)
            .map(|i| Context::new(i, vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]))
            .collect();
        DiscreteEnvironment::new(contexts, vec![1.0 / m as f64; m], vec![vec![0.5; 3]; m], Default::default())
            .unwrap()
    }

    #[test]
    fn uniform_actions_give_uniform_fit() {
        let env = continuous_env(1);
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(UniformPolicy::new(3))];
        let d = sample_stratified(&env, &l, &[10_000], 2).unwrap();
        let m = fit_behavior(d.iter(), 3, &FitConfig::default()).unwrap();
        for ctx in env.contexts() {
            for p in m.probabilities(ctx) {
                assert!((p - 1.0 / 3.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn recovers_well_specified_softmax_logger() {
        let env = continuous_env(3);
        let truth = LinearSoftmaxPolicy::new(
            LinearScorer::new(vec![vec![0.2, 1.0, -0.5], vec![0.0, -0.8, 0.6], vec![-0.3, 0.1, 0.9]]).unwrap(),
            1.0,
        )
        .unwrap();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(truth.clone())];
        let d = sample_stratified(&env, &l, &[10_000], 4).unwrap();
        let (m, trace) = fit_behavior_traced(d.iter(), 3, &FitConfig::default()).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let avg: f64 = env
            .contexts()
            .iter()
            .map(|c| tv(&m.probabilities(c), &truth.probabilities(c)))
            .sum::<f64>()
            / env.num_contexts() as f64;
        assert!(avg < 0.05, "average TV {avg}");
    }

    #[test]
    fn pooled_point_masses_recover_marginal() {
        let env = DiscreteEnvironment::toy();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(FixedPolicy::point_mass(2, 0)), Arc::new(FixedPolicy::point_mass(2, 1))];
        let d = sample_stratified(&env, &l, &[250, 750], 5).unwrap();
        let m = fit_behavior(d.iter(), 2, &FitConfig::default()).unwrap();
        let target = marginal_policy(&l, &[0.25, 0.75]).unwrap();
        for c in env.contexts() {
            assert!(tv(&m.probabilities(c), &target.probabilities(c)) < 0.03);
        }
    }

    #[test]
    fn pooled_fit_approaches_marginal_as_n_grows() {
        let env = continuous_env(6);
        let a = LinearSoftmaxPolicy::new(LinearScorer::new(vec![vec![0.0, 1.5, 0.0], vec![0.0; 3], vec![-0.5, 0.0, 0.5]]).unwrap(), 1.0)
            .unwrap();
        let b = LinearSoftmaxPolicy::new(LinearScorer::new(vec![vec![0.5, 0.0, -1.0], vec![0.0; 3], vec![0.0; 3]]).unwrap(), 1.0)
            .unwrap();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(a), Arc::new(b)];
        let target = marginal_policy(&l, &[0.5, 0.5]).unwrap();
        let err = |n: usize| {
            let d = sample_stratified(&env, &l, &[n, n], 7).unwrap();
            let m = fit_behavior(d.iter(), 3, &FitConfig::default()).unwrap();
            env.contexts()
                .iter()
                .map(|c| tv(&m.probabilities(c), &target.probabilities(c)))
                .sum::<f64>()
                / env.num_contexts() as f64
        };
        let (small, large) = (err(100), err(10_000));
        assert!(large < small, "{large} !< {small}");
        // A single logger is not the target.
        let single = env
            .contexts()
            .iter()
            .map(|c| tv(&l[0].probabilities(c), &target.probabilities(c)))
            .sum::<f64>()
            / env.num_contexts() as f64;
        assert!(large < single);
    }

    #[test]
    fn single_action_data_gives_near_point_mass() {
        let env = DiscreteEnvironment::toy();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(FixedPolicy::point_mass(2, 1))];
        let d = sample_stratified(&env, &l, &[100], 8).unwrap();
        let m = fit_behavior(d.iter(), 2, &FitConfig::default()).unwrap();
        assert!(m.probability(&env.contexts()[0], 1) > 0.99);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(9);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)]).collect();
        let counts: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gen_range(0..4) as f64).collect()).collect();
        for _ in 0..20 {
            let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut grad = vec![0.0; 9];
            let mut hess = vec![0.0; 81];
            loss_grad(&xs, &counts, &w, 3, 0.2, &mut grad, Some(&mut hess));
            let f = |v: &[f64]| loss_grad(&xs, &counts, v, 3, 0.2, &mut vec![0.0; 9], None);
            assert!(gradient_error(f, &w, &grad) < 1e-4);
            for j in 0..9 {
                let partial = |v: &[f64]| {
                    let mut g = vec![0.0; 9];
                    loss_grad(&xs, &counts, v, 3, 0.2, &mut g, None);
                    g[j]
                };
                assert!(gradient_error(partial, &w, &hess[j * 9..(j + 1) * 9]) < 1e-4);
            }
        }
    }

    #[test]
    fn newton_reaches_the_gradient_descent_optimum() {
        let mut rng = rng_from_seed(4);
        let samples: Vec<LoggedSample> = (0..300)
            .map(|i| {
                let x = rng.gen_range(-1.0..1.0);
                let a = if rng.gen_bool(0.5 + 0.4 * x) { 0 } else { rng.gen_range(1..3) };
                LoggedSample {
                    logger: 0,
                    context: Context::new(i, vec![x]),
                    action: a,
                    reward: 0.0,
                }
            })
            .collect();
        let slow = FitConfig {
            iterations: 20_000,
            learning_rate: 0.5,
            ..FitConfig::default()
        };
        let fast = FitConfig {
            solver: Solver::Newton,
            iterations: 50,
            ..FitConfig::default()
        };
        let (a, ta) = fit_behavior_traced(&samples, 3, &slow).unwrap();
        let (b, tb) = fit_behavior_traced(&samples, 3, &fast).unwrap();
        assert!(tb.windows(2).all(|w| w[1] <= w[0]));
        assert!(tb.len() < 30, "{} Newton steps", tb.len());
        assert!(tb.last().unwrap() <= &(ta.last().unwrap() + 1e-9));
        for s in samples.iter().take(20) {
            for k in 0..3 {
                assert!((a.probability(&s.context, k) - b.probability(&s.context, k)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn record_round_trip() {
        let m = BehaviorModel::new(vec![vec![0.5, -1.0], vec![0.0, 2.0]]).unwrap();
        let back = BehaviorModel::from_record(&MatrixRecord::parse(&m.to_record().to_text()).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
