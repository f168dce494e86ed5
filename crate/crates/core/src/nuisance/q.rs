use std::sync::Arc;

use crate::data::{Context, LoggedSample, StratifiedDataset};
use crate::error::{OpeError, Result};
use crate::estimators::{ControlVariate, QFitter};
use crate::policy::{affine, MatrixRecord};

use super::{
    add_outer, add_ridge, add_ridge_hessian, damped_newton, feature_dim, group_by_features, logit, sigmoid, softplus,
    FitConfig, Grouped, Solver, Standardizer,
};

/// Output link of a per-action reward regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    /// `q̂ = R_max · σ(w·[1,s])`, fit by log-loss on `r / R_max`.
    Logistic { r_max: f64 },
    /// `q̂ = w·[1,s]`, fit by squared loss.
    Identity,
}

impl Link {
    pub fn binary() -> Self {
        Link::Logistic { r_max: 1.0 }
    }

    fn target(&self, r: f64) -> f64 {
        match *self {
            Link::Logistic { r_max } => r / r_max,
            Link::Identity => r,
        }
    }

    /// Map from the linear predictor `z` to `q̂`.
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Link::Logistic { r_max } => r_max * sigmoid(z),
            Link::Identity => z,
        }
    }
}

/// Per-action regression of reward on context.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    link: Link,
    weights: Vec<Vec<f64>>,
    /// Actions with no training samples; their model is the global mean.
    flagged: Vec<bool>,
}

impl QModel {
    pub fn new(link: Link, weights: Vec<Vec<f64>>) -> Result<Self> {
        let width = weights.first().map_or(0, Vec::len);
        if width == 0 || weights.iter().any(|w| w.len() != width) {
            return Err(OpeError::InvalidArgument("ragged or empty q-model weights".into()));
        }
        if let Link::Logistic { r_max } = link {
            if !(r_max > 0.0 && r_max.is_finite()) {
                return Err(OpeError::InvalidArgument(format!("r_max must be positive, got {r_max}")));
            }
        }
        let flagged = vec![false; weights.len()];
        Ok(Self { link, weights, flagged })
    }

    pub fn zeros(link: Link, num_actions: usize, dim: usize) -> Self {
        Self {
            link,
            weights: vec![vec![0.0; dim + 1]; num_actions],
            flagged: vec![false; num_actions],
        }
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn num_actions(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn predict(&self, features: &[f64], action: usize) -> f64 {
        self.link.apply(affine(&self.weights[action], features))
    }

    pub fn to_record(&self) -> MatrixRecord {
        match self.link {
            Link::Logistic { r_max } => MatrixRecord::new("q-logistic", r_max, self.weights.clone()),
            Link::Identity => MatrixRecord::new("q-identity", 0.0, self.weights.clone()),
        }
    }

    pub fn from_record(record: &MatrixRecord) -> Result<Self> {
        let link = match record.tag.as_str() {
            "q-logistic" => Link::Logistic { r_max: record.param },
            "q-identity" => Link::Identity,
            other => {
                return Err(OpeError::Parse {
                    row: 1,
                    message: format!("expected a q-model tag, found '{other}'"),
                })
            }
        };
        Self::new(link, record.rows.clone())
    }
}

impl ControlVariate for QModel {
    fn value(&self, ctx: &Context, action: usize) -> f64 {
        self.predict(&ctx.features, action)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(super) struct QStats {
    count: f64,
    sum_y: f64,
    sum_y2: f64,
}

/// Per-action regularized loss and gradient over grouped rows, and the
/// Hessian when `hess` is given.
fn loss_grad(
    xs: &[Vec<f64>],
    stats: &[QStats],
    w: &[f64],
    link: Link,
    l2: f64,
    grad: &mut [f64],
    mut hess: Option<&mut [f64]>,
) -> f64 {
    let p = w.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    if let Some(h) = hess.as_deref_mut() {
        h.iter_mut().for_each(|v| *v = 0.0);
    }
    let n: f64 = stats.iter().map(|s| s.count).sum();
    let mut loss = 0.0;
    for (x, s) in xs.iter().zip(stats) {
        let z = affine(w, x);
        let (resid, curvature) = match link {
            Link::Logistic { .. } => {
                loss += s.count * softplus(z) - s.sum_y * z;
                let sg = sigmoid(z);
                (s.count * sg - s.sum_y, s.count * sg * (1.0 - sg))
            }
            Link::Identity => {
                loss += 0.5 * (s.count * z * z - 2.0 * s.sum_y * z + s.sum_y2);
                (s.count * z - s.sum_y, s.count)
            }
        };
        grad[0] += resid;
        for (g, v) in grad[1..].iter_mut().zip(x) {
            *g += resid * v;
        }
        if let Some(h) = hess.as_deref_mut() {
            add_outer(h, p, 0, 0, x, curvature);
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    if let Some(h) = hess {
        h.iter_mut().for_each(|v| *v /= n);
        add_ridge_hessian(h, p, 0, p, l2);
    }
    add_ridge(w, l2, &mut loss, grad);
    loss
}

/// The training objective of [`fit_q`] for `action` at raw-feature weights
/// `w = [bias, slopes…]`, with its gradient.
pub fn q_objective<'a>(
    samples: impl IntoIterator<Item = &'a LoggedSample>,
    action: usize,
    link: Link,
    l2_penalty: f64,
    w: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let samples: Vec<&LoggedSample> = samples.into_iter().filter(|s| s.action == action).collect();
    if samples.is_empty() {
        return Err(OpeError::InsufficientData(format!("no samples for action {action}")));
    }
    let dim = feature_dim(samples.iter().copied())?.unwrap_or(0);
    if w.len() != dim + 1 {
        return Err(OpeError::LengthMismatch {
            expected: dim + 1,
            got: w.len(),
        });
    }
    let groups: Grouped<QStats> = group_by_features(samples.iter().copied(), |t: &mut QStats, s| {
        let y = link.target(s.reward);
        t.count += 1.0;
        t.sum_y += y;
        t.sum_y2 += y * y;
    });
    let xs: Vec<Vec<f64>> = groups.features.iter().map(|x| x.to_vec()).collect();
    let mut grad = vec![0.0; w.len()];
    let loss = loss_grad(&xs, &groups.stats, w, link, l2_penalty, &mut grad, None);
    Ok((loss, grad))
}

/// Fits `q̂` and returns the per-action loss after every step (index 0 is the
/// loss at the zero initialization).
pub fn fit_q_traced<'a>(
    samples: impl IntoIterator<Item = &'a LoggedSample>,
    num_actions: usize,
    link: Link,
    config: &FitConfig,
) -> Result<(QModel, Vec<Vec<f64>>)> {
    config.validate()?;
    let samples: Vec<&LoggedSample> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(OpeError::InsufficientData("q-model fit needs at least one sample".into()));
    }
    if num_actions == 0 {
        return Err(OpeError::InvalidArgument("q-model needs at least one action".into()));
    }
    let dim = feature_dim(samples.iter().copied())?.unwrap_or(0);
    let mut total_y = 0.0;
    for s in &samples {
        if s.action >= num_actions {
            return Err(OpeError::InvalidArgument(format!(
                "action {} outside 0..{num_actions}",
                s.action
            )));
        }
        let y = link.target(s.reward);
        if matches!(link, Link::Logistic { .. }) && !(0.0..=1.0).contains(&y) {
            return Err(OpeError::InvalidArgument(format!(
                "reward {} outside [0, r_max] for the logistic link",
                s.reward
            )));
        }
        total_y += y;
    }
    let prior = total_y / samples.len() as f64;

    let mut model = QModel::zeros(link, num_actions, dim);
    let mut traces = vec![Vec::new(); num_actions];
    for a in 0..num_actions {
        let groups: Grouped<QStats> = group_by_features(samples.iter().copied().filter(|s| s.action == a), |t: &mut QStats, s| {
            let y = link.target(s.reward);
            t.count += 1.0;
            t.sum_y += y;
            t.sum_y2 += y * y;
        });
        if groups.len() == 0 {
            log::debug!("action {a} has no training samples; using the global mean");
            model.flagged[a] = true;
            model.weights[a][0] = match link {
                Link::Logistic { .. } => logit(prior.clamp(1e-6, 1.0 - 1e-6)),
                Link::Identity => prior,
            };
            continue;
        }
        let st = Standardizer::fit(&groups, dim, |t| t.count, config.standardize);
        let xs: Vec<Vec<f64>> = groups.features.iter().map(|x| st.apply(x)).collect();
        let l2 = config.l2_penalty;
        let mut w = match config.solver {
            Solver::Gradient => {
                let mut w = vec![0.0; dim + 1];
                let mut grad = vec![0.0; dim + 1];
                let trace = &mut traces[a];
                trace.reserve(config.iterations + 1);
                for _ in 0..config.iterations {
                    trace.push(loss_grad(&xs, &groups.stats, &w, link, l2, &mut grad, None));
                    for (wj, gj) in w.iter_mut().zip(&grad) {
                        *wj -= config.learning_rate * gj;
                    }
                }
                trace.push(loss_grad(&xs, &groups.stats, &w, link, l2, &mut grad, None));
                w
            }
            Solver::Newton => {
                let (w, trace) = damped_newton(vec![0.0; dim + 1], config.iterations, |w, g, h| {
                    loss_grad(&xs, &groups.stats, w, link, l2, g, Some(h))
                });
                traces[a] = trace;
                w
            }
        };
        if w.iter().any(|v| !v.is_finite()) {
            return Err(OpeError::NonFinite(format!("q-model weights for action {a}")));
        }
        st.unfold(&mut w);
        model.weights[a] = w;
    }
    Ok((model, traces))
}

/// Fits one regression per action on the pooled samples.
pub fn fit_q<'a>(
    samples: impl IntoIterator<Item = &'a LoggedSample>,
    num_actions: usize,
    link: Link,
    config: &FitConfig,
) -> Result<QModel> {
    fit_q_traced(samples, num_actions, link, config).map(|(m, _)| m)
}

/// [`QFitter`] that pools every stratum of the training fold.
#[derive(Debug, Clone)]
pub struct LogisticQFitter {
    pub num_actions: usize,
    pub link: Link,
    pub config: FitConfig,
}

impl QFitter for LogisticQFitter {
    fn fit_q(&self, train: &StratifiedDataset) -> Result<Arc<dyn ControlVariate>> {
        Ok(Arc::new(fit_q(train.iter(), self.num_actions, self.link, &self.config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::testing::gradient_error;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn sample(x: Vec<f64>, a: usize, r: f64) -> LoggedSample {
        LoggedSample {
            logger: 0,
            context: Context::new(0, x),
            action: a,
            reward: r,
        }
    }

    #[test]
    fn all_ones_drive_prediction_up_monotonically() {
        let data: Vec<_> = (0..50).map(|i| sample(vec![i as f64 / 50.0], 0, 1.0)).collect();
        let (m, traces) = fit_q_traced(&data, 1, Link::binary(), &FitConfig::default()).unwrap();
        assert!(traces[0].windows(2).all(|w| w[1] <= w[0]));
        assert!(m.predict(&[0.5], 0) > 0.9);
    }

    #[test]
    fn single_step_from_zero_init() {
        let data = vec![
            sample(vec![], 0, 1.0),
            sample(vec![], 0, 1.0),
            sample(vec![], 0, 0.0),
            sample(vec![], 0, 1.0),
        ];
        let zero = QModel::zeros(Link::binary(), 1, 0);
        assert_eq!(zero.predict(&[], 0), 0.5);
        let config = FitConfig {
            iterations: 1,
            ..FitConfig::default()
        };
        let m = fit_q(&data, 1, Link::binary(), &config).unwrap();
        let expected = sigmoid(0.1 * (0.75 - 0.5));
        assert!((m.predict(&[], 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn unseen_action_falls_back_to_global_mean() {
        let data = vec![sample(vec![1.0], 0, 1.0), sample(vec![2.0], 0, 0.0), sample(vec![0.0], 0, 0.0)];
        let m = fit_q(&data, 2, Link::Logistic { r_max: 2.0 }, &FitConfig::default()).unwrap();
        assert_eq!(m.flagged(), &[false, true]);
        assert!((m.predict(&[5.0], 1) - 1.0 / 3.0).abs() < 1e-9);
        let m = fit_q(&data, 2, Link::Identity, &FitConfig::default()).unwrap();
        assert!((m.predict(&[5.0], 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_link_rejects_out_of_range_rewards() {
        let data = vec![sample(vec![], 0, 1.5)];
        assert!(fit_q(&data, 1, Link::binary(), &FitConfig::default()).is_err());
        assert!(fit_q(&data, 1, Link::Identity, &FitConfig::default()).is_ok());
        assert!(fit_q(&Vec::<LoggedSample>::new(), 1, Link::binary(), &FitConfig::default()).is_err());
    }

    #[test]
    fn newton_matches_long_gradient_descent() {
        let mut rng = rng_from_seed(8);
        let data: Vec<_> = (0..300)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let r = if rng.gen_bool(sigmoid(0.3 + 1.5 * x)) { 1.0 } else { 0.0 };
                sample(vec![x], 0, r)
            })
            .collect();
        let slow = FitConfig {
            iterations: 20_000,
            learning_rate: 1.0,
            ..FitConfig::default()
        };
        let fast = FitConfig {
            solver: Solver::Newton,
            iterations: 50,
            ..FitConfig::default()
        };
        for link in [Link::binary(), Link::Identity] {
            let a = fit_q(&data, 1, link, &slow).unwrap();
            let (b, traces) = fit_q_traced(&data, 1, link, &fast).unwrap();
            assert!(traces[0].windows(2).all(|w| w[1] <= w[0]));
            assert!(traces[0].len() < 20);
            for (u, v) in a.weights()[0].iter().zip(&b.weights()[0]) {
                assert!((u - v).abs() < 1e-4, "{link:?}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn identity_link_recovers_linear_mean() {
        let mut rng = rng_from_seed(3);
        let data: Vec<_> = (0..400)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                sample(vec![x], 0, 0.5 + 2.0 * x)
            })
            .collect();
        let config = FitConfig {
            l2_penalty: 0.0,
            ..FitConfig::default()
        };
        let m = fit_q(&data, 1, Link::Identity, &config).unwrap();
        assert!((m.weights()[0][0] - 0.5).abs() < 1e-3);
        assert!((m.weights()[0][1] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn standardized_fit_matches_raw_fit_at_convergence() {
        let mut rng = rng_from_seed(4);
        let data: Vec<_> = (0..300)
            .map(|_| {
                let x: f64 = rng.gen_range(0.0..4.0);
                let r = if rng.gen_bool(sigmoid(x - 2.0)) { 1.0 } else { 0.0 };
                sample(vec![x], 0, r)
            })
            .collect();
        let base = FitConfig {
            l2_penalty: 0.0,
            iterations: 20_000,
            ..FitConfig::default()
        };
        let raw = fit_q(&data, 1, Link::binary(), &base).unwrap();
        let std = fit_q(&data, 1, Link::binary(), &FitConfig { standardize: true, ..base }).unwrap();
        for x in [0.0, 1.0, 3.0] {
            assert!((raw.predict(&[x], 0) - std.predict(&[x], 0)).abs() < 1e-3);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(5);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)]).collect();
        let stats: Vec<QStats> = (0..6)
            .map(|_| {
                let c = rng.gen_range(1..5) as f64;
                let y = rng.gen_range(0.0..c);
                QStats {
                    count: c,
                    sum_y: y,
                    sum_y2: y * y / c,
                }
            })
            .collect();
        for link in [Link::binary(), Link::Identity] {
            for _ in 0..20 {
                let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let mut grad = vec![0.0; 3];
                let mut hess = vec![0.0; 9];
                loss_grad(&xs, &stats, &w, link, 0.3, &mut grad, Some(&mut hess));
                let f = |v: &[f64]| loss_grad(&xs, &stats, v, link, 0.3, &mut vec![0.0; 3], None);
                assert!(gradient_error(f, &w, &grad) < 1e-4);
                for j in 0..3 {
                    let partial = |v: &[f64]| {
                        let mut g = vec![0.0; 3];
                        loss_grad(&xs, &stats, v, link, 0.3, &mut g, None);
                        g[j]
                    };
                    assert!(gradient_error(partial, &w, &hess[j * 3..(j + 1) * 3]) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn well_specified_fit_tracks_true_q() {
        use crate::env::{sample_stratified, DiscreteEnvironment};
        use crate::policy::{Policy, UniformPolicy};
        let mut rng = rng_from_seed(6);
        let beta = [[-0.5, 1.2, 0.3], [0.4, -0.7, 1.0]];
        let m = 50;
        let contexts: Vec<Context> = (0..m)
            .map(|i| Context::new(i, vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]))
            .collect();
        let q: Vec<Vec<f64>> = contexts
            .iter()
            .map(|c| beta.iter().map(|b| sigmoid(affine(b, &c.features))).collect())
            .collect();
        let env = DiscreteEnvironment::new(contexts, vec![1.0 / m as f64; m], q, Default::default()).unwrap();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(UniformPolicy::new(2))];
        let d = sample_stratified(&env, &l, &[10_000], 7).unwrap();
        let fit = fit_q(d.iter(), 2, Link::binary(), &FitConfig::default()).unwrap();
        let mse: f64 = env
            .contexts()
            .iter()
            .flat_map(|c| (0..2).map(move |a| (c, a)))
            .map(|(c, a)| (fit.value(c, a) - env.q(c.id, a)).powi(2))
            .sum::<f64>()
            / (2 * m) as f64;
        assert!(mse < 0.01, "mse {mse}");
    }

    #[test]
    fn record_round_trip() {
        let m = QModel::new(Link::Logistic { r_max: 2.0 }, vec![vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap();
        let back = QModel::from_record(&MatrixRecord::parse(&m.to_record().to_text()).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
