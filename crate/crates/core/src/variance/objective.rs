use std::collections::HashMap;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::data::{Context, StratifiedDataset};
use crate::error::{OpeError, Result};
use crate::estimators::{cross_fit_estimate, ControlVariate, CrossFit, InverseMarginal, Nuisance, WeightFunction};
use crate::nuisance::{damped_newton, sigmoid, FitConfig, Link, QModel, Solver};
use crate::policy::{affine, Policy};
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::VarianceObjectiveKind;

/// Number of optimizer starts: the zero initialization plus seeded random ones.
pub const DEFAULT_STARTS: usize = 3;

/// Hypothesis class `𝒬` searched by the variance-minimizing fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QClass {
    /// The single function `g ≡ 0`.
    Zero,
    /// `g_θ(s, a) = R_max σ(θ_a · [1, s])`, one parameter row per action.
    Logistic { r_max: f64 },
}

#[derive(Debug, Clone)]
struct Row {
    stratum: usize,
    ctx: Context,
    action: usize,
    reward: f64,
    /// `h(k, s, a) π_e(a|s)`.
    ratio: f64,
    pi_e: Vec<f64>,
    count: f64,
}

/// Empirical variance of the score
/// `φ(s,a,r; g) = h π_e(a|s) (r − g(s,a)) + g(s, π_e)` as a function of `g`.
///
/// Rows sharing stratum, features, action and reward are merged.
#[derive(Debug, Clone)]
pub struct VarianceObjective {
    kind: VarianceObjectiveKind,
    rows: Vec<Row>,
    num_strata: usize,
    num_actions: usize,
    dim: usize,
    n: f64,
}

impl VarianceObjective {
    pub fn new(
        data: &StratifiedDataset,
        kind: VarianceObjectiveKind,
        pi_e: &dyn Policy,
        h: &dyn WeightFunction,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(OpeError::InsufficientData("variance objective on empty data".into()));
        }
        let dim = crate::nuisance::feature_dim(data.iter())?.unwrap_or(0);
        let num_actions = pi_e.num_actions();
        let mut index: HashMap<(usize, Vec<u64>, usize, u64), usize> = HashMap::new();
        let mut rows: Vec<Row> = Vec::new();
        for s in data.iter() {
            let key = (
                s.logger,
                s.context.features.iter().map(|v| v.to_bits()).collect(),
                s.action,
                s.reward.to_bits(),
            );
            if let Some(&i) = index.get(&key) {
                rows[i].count += 1.0;
                continue;
            }
            let probs = pi_e.probabilities(&s.context);
            let pe = probs[s.action];
            let ratio = if pe == 0.0 {
                0.0
            } else {
                pe * h.weight(s.logger, &s.context, s.action)
            };
            if !ratio.is_finite() {
                return Err(OpeError::NonFinite(format!(
                    "importance ratio at context {} action {}",
                    s.context.id, s.action
                )));
            }
            index.insert(key, rows.len());
            rows.push(Row {
                stratum: s.logger,
                ctx: s.context.clone(),
                action: s.action,
                reward: s.reward,
                ratio,
                pi_e: probs,
                count: 1.0,
            });
        }
        Ok(Self {
            kind,
            rows,
            num_strata: data.num_strata(),
            num_actions,
            dim,
            n: data.len() as f64,
        })
    }

    pub fn kind(&self) -> VarianceObjectiveKind {
        self.kind
    }

    /// Length of the flattened parameter vector of [`QClass::Logistic`].
    pub fn num_params(&self) -> usize {
        self.num_actions * (self.dim + 1)
    }

    fn center(&self, row: &Row) -> usize {
        match self.kind {
            VarianceObjectiveKind::Stratified => row.stratum,
            VarianceObjectiveKind::Iid => 0,
        }
    }

    fn variance_of(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let mut sums = vec![0.0; self.num_strata.max(1)];
        let mut counts = vec![0.0; self.num_strata.max(1)];
        for (row, p) in self.rows.iter().zip(phi) {
            let c = self.center(row);
            sums[c] += row.count * p;
            counts[c] += row.count;
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 })
            .collect();
        let total = self
            .rows
            .iter()
            .zip(phi)
            .map(|(row, p)| row.count * (p - means[self.center(row)]).powi(2))
            .sum::<f64>()
            / self.n;
        (total, means)
    }

    /// Objective value for an arbitrary control variate.
    pub fn evaluate(&self, g: &dyn ControlVariate) -> f64 {
        let phi: Vec<f64> = self
            .rows
            .iter()
            .map(|row| {
                let gv = if row.ratio == 0.0 { 0.0 } else { g.value(&row.ctx, row.action) };
                row.ratio * (row.reward - gv) + g.expected_under(&row.ctx, &row.pi_e)
            })
            .collect();
        self.variance_of(&phi).0
    }

    /// Objective at logistic parameters `theta` (row-major, `A × (d+1)`), and
    /// its gradient written into `grad`.
    pub fn value_grad(&self, theta: &[f64], r_max: f64, grad: &mut [f64]) -> f64 {
        let width = self.dim + 1;
        let a_count = self.num_actions;
        let mut sig = vec![0.0; self.rows.len() * a_count];
        let phi: Vec<f64> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let s = &mut sig[i * a_count..(i + 1) * a_count];
                let mut baseline = 0.0;
                for b in 0..a_count {
                    s[b] = sigmoid(affine(&theta[b * width..(b + 1) * width], &row.ctx.features));
                    baseline += row.pi_e[b] * r_max * s[b];
                }
                row.ratio * (row.reward - r_max * s[row.action]) + baseline
            })
            .collect();
        let (value, means) = self.variance_of(&phi);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let e = 2.0 * row.count * (phi[i] - means[self.center(row)]) / self.n;
            if e == 0.0 {
                continue;
            }
            for b in 0..a_count {
                let s = sig[i * a_count + b];
                let mut d = row.pi_e[b];
                if b == row.action {
                    d -= row.ratio;
                }
                let coef = e * d * r_max * s * (1.0 - s);
                if coef == 0.0 {
                    continue;
                }
                let g = &mut grad[b * width..(b + 1) * width];
                g[0] += coef;
                for (gj, x) in g[1..].iter_mut().zip(row.ctx.features.iter()) {
                    *gj += coef * x;
                }
            }
        }
        value
    }

    /// Objective, gradient and Gauss-Newton matrix `2 JᵀJ` of the centered
    /// residuals `√(c_i/n) (φ_i − φ̄)` at logistic parameters `theta`.
    pub fn value_grad_gauss_newton(&self, theta: &[f64], r_max: f64, grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let width = self.dim + 1;
        let a_count = self.num_actions;
        let p = theta.len();
        let groups = self.num_strata.max(1);
        let mut phi = vec![0.0; self.rows.len()];
        let mut jac = vec![0.0; self.rows.len() * p];
        let mut sums = vec![0.0; groups];
        let mut jac_sums = vec![0.0; groups * p];
        let mut counts = vec![0.0; groups];
        for (i, row) in self.rows.iter().enumerate() {
            let ji = &mut jac[i * p..(i + 1) * p];
            let mut baseline = 0.0;
            let mut own = 0.0;
            for b in 0..a_count {
                let s = sigmoid(affine(&theta[b * width..(b + 1) * width], &row.ctx.features));
                baseline += row.pi_e[b] * r_max * s;
                if b == row.action {
                    own = s;
                }
                let mut d = row.pi_e[b];
                if b == row.action {
                    d -= row.ratio;
                }
                let coef = d * r_max * s * (1.0 - s);
                let block = &mut ji[b * width..(b + 1) * width];
                block[0] = coef;
                for (bj, x) in block[1..].iter_mut().zip(row.ctx.features.iter()) {
                    *bj = coef * x;
                }
            }
            phi[i] = row.ratio * (row.reward - r_max * own) + baseline;
            let c = self.center(row);
            sums[c] += row.count * phi[i];
            counts[c] += row.count;
            for (acc, v) in jac_sums[c * p..(c + 1) * p].iter_mut().zip(ji.iter()) {
                *acc += row.count * v;
            }
        }
        for c in 0..groups {
            if counts[c] > 0.0 {
                sums[c] /= counts[c];
                jac_sums[c * p..(c + 1) * p].iter_mut().for_each(|v| *v /= counts[c]);
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut value = 0.0;
        let mut centered = vec![0.0; p];
        for (i, row) in self.rows.iter().enumerate() {
            let c = self.center(row);
            let w = row.count / self.n;
            let e = phi[i] - sums[c];
            value += w * e * e;
            for ((cj, j), m) in centered.iter_mut().zip(&jac[i * p..(i + 1) * p]).zip(&jac_sums[c * p..(c + 1) * p]) {
                *cj = j - m;
            }
            for a in 0..p {
                if centered[a] == 0.0 {
                    continue;
                }
                grad[a] += 2.0 * w * e * centered[a];
                let scaled = 2.0 * w * centered[a];
                for (h, cb) in hess[a * p..(a + 1) * p].iter_mut().zip(&centered) {
                    *h += scaled * cb;
                }
            }
        }
        value
    }

    pub fn value(&self, theta: &[f64], r_max: f64) -> f64 {
        let mut grad = vec![0.0; theta.len()];
        self.value_grad(theta, r_max, &mut grad)
    }
}

/// A control variate chosen by minimizing an empirical variance objective.
#[derive(Debug, Clone)]
pub struct FittedControlVariate {
    pub model: QModel,
    /// Unpenalized objective at the returned model.
    pub objective: f64,
    /// Penalized objective after every accepted step of the winning start.
    pub trace: Vec<f64>,
}

impl ControlVariate for FittedControlVariate {
    fn value(&self, ctx: &Context, action: usize) -> f64 {
        self.model.value(ctx, action)
    }
}

fn ridge(theta: &[f64], width: usize, l2: f64, grad: Option<&mut [f64]>) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let mut pen = 0.0;
    let mut grad = grad;
    for (j, t) in theta.iter().enumerate() {
        if j % width == 0 {
            continue;
        }
        pen += 0.5 * l2 * t * t;
        if let Some(g) = grad.as_deref_mut() {
            g[j] += l2 * t;
        }
    }
    pen
}

/// Gradient descent with backtracking: a step is accepted only if it does not
/// increase the penalized objective, so the trace is non-increasing.
fn descend(obj: &VarianceObjective, mut theta: Vec<f64>, r_max: f64, config: &FitConfig) -> (Vec<f64>, Vec<f64>) {
    let width = obj.dim + 1;
    let penalized = |t: &[f64], g: &mut [f64]| {
        let v = obj.value_grad(t, r_max, g);
        v + ridge(t, width, config.l2_penalty, Some(g))
    };
    let mut grad = vec![0.0; theta.len()];
    let mut cand_grad = vec![0.0; theta.len()];
    let mut cand = vec![0.0; theta.len()];
    let mut f = penalized(&theta, &mut grad);
    let mut trace = vec![f];
    let max_step = 100.0 * config.learning_rate;
    let mut step = config.learning_rate;
    for _ in 0..config.iterations {
        let mut accepted = false;
        for _ in 0..40 {
            for ((c, t), g) in cand.iter_mut().zip(&theta).zip(&grad) {
                *c = t - step * g;
            }
            let fc = penalized(&cand, &mut cand_grad);
            if fc.is_finite() && fc <= f {
                accepted = fc < f;
                std::mem::swap(&mut theta, &mut cand);
                std::mem::swap(&mut grad, &mut cand_grad);
                f = fc;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(f);
        step = (step * 1.5).min(max_step);
    }
    (theta, trace)
}

/// Levenberg-damped Gauss-Newton on the penalized objective.
fn gauss_newton(obj: &VarianceObjective, theta: Vec<f64>, r_max: f64, config: &FitConfig) -> (Vec<f64>, Vec<f64>) {
    let width = obj.dim + 1;
    let l2 = config.l2_penalty;
    damped_newton(theta, config.iterations, |t, g, h| {
        let v = obj.value_grad_gauss_newton(t, r_max, g, h);
        let p = t.len();
        for j in (0..p).filter(|j| j % width != 0) {
            h[j * p + j] += l2;
        }
        v + ridge(t, width, l2, Some(g))
    })
}

/// Minimizes the chosen variance objective over `class`, starting from zero
/// and from `starts − 1` seeded Gaussian initializations; the best start wins.
pub fn fit_control_variate(
    data: &StratifiedDataset,
    kind: VarianceObjectiveKind,
    class: QClass,
    pi_e: &dyn Policy,
    h: &dyn WeightFunction,
    config: &FitConfig,
    starts: usize,
) -> Result<FittedControlVariate> {
    config.validate()?;
    let obj = VarianceObjective::new(data, kind, pi_e, h)?;
    let r_max = match class {
        QClass::Zero => {
            let model = QModel::zeros(Link::Identity, obj.num_actions, obj.dim);
            let objective = obj.evaluate(&model);
            if !objective.is_finite() {
                return Err(OpeError::NonFinite("variance objective".into()));
            }
            return Ok(FittedControlVariate {
                model,
                objective,
                trace: vec![objective],
            });
        }
        QClass::Logistic { r_max } => r_max,
    };
    let p = obj.num_params();
    let init_dist = Normal::new(0.0, 0.5).expect("valid normal");
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for start in 0..starts.max(1) {
        let theta0 = if start == 0 {
            vec![0.0; p]
        } else {
            let mut rng = rng_from_seed(derive_seed(config.seed, &[stream::STARTS, start as u64]));
            (0..p).map(|_| init_dist.sample(&mut rng)).collect()
        };
        let (theta, trace) = match config.solver {
            Solver::Gradient => descend(&obj, theta0, r_max, config),
            Solver::Newton => gauss_newton(&obj, theta0, r_max, config),
        };
        let last = *trace.last().expect("trace has the initial value");
        if !last.is_finite() {
            continue;
        }
        if best.as_ref().map_or(true, |(b, _, _)| last < *b) {
            best = Some((last, theta, trace));
        }
    }
    let (_, theta, trace) =
        best.ok_or_else(|| OpeError::NonFinite("variance objective at every start; check overlap".into()))?;
    let objective = obj.value(&theta, r_max);
    let rows = theta.chunks(obj.dim + 1).map(<[f64]>::to_vec).collect();
    Ok(FittedControlVariate {
        model: QModel::new(Link::Logistic { r_max }, rows)?,
        objective,
        trace,
    })
}

/// `q̌ = argmin_{g∈𝒬} Σ_k ρ_k var_{n_k}[φ(·; g)]` with `h = 1/π_*`.
pub fn smrdr_fit(
    data: &StratifiedDataset,
    class: QClass,
    pi_e: &dyn Policy,
    pi_star: Arc<dyn Policy>,
    config: &FitConfig,
) -> Result<FittedControlVariate> {
    let h = InverseMarginal(pi_star);
    fit_control_variate(data, VarianceObjectiveKind::Stratified, class, pi_e, &h, config, DEFAULT_STARTS)
}

/// `q̌_MRDR = argmin_{g∈𝒬} var_n[φ(·; g)]` with `h = 1/π_*`.
pub fn mrdr_fit(
    data: &StratifiedDataset,
    class: QClass,
    pi_e: &dyn Policy,
    pi_star: Arc<dyn Policy>,
    config: &FitConfig,
) -> Result<FittedControlVariate> {
    let h = InverseMarginal(pi_star);
    fit_control_variate(data, VarianceObjectiveKind::Iid, class, pi_e, &h, config, DEFAULT_STARTS)
}

fn fitted_estimate(
    data: &StratifiedDataset,
    kind: VarianceObjectiveKind,
    class: QClass,
    pi_e: &dyn Policy,
    pi_star: Arc<dyn Policy>,
    config: &FitConfig,
    cross_fit: CrossFit,
) -> Result<f64> {
    let fitter = |train: &StratifiedDataset, _eval: &[usize]| -> Result<Nuisance> {
        let h = InverseMarginal(pi_star.clone());
        let g = fit_control_variate(train, kind, class, pi_e, &h, config, DEFAULT_STARTS)?;
        Ok(Nuisance {
            weight: Arc::new(h),
            control: Arc::new(g),
        })
    };
    cross_fit_estimate(data, cross_fit, &fitter, pi_e)
}

/// `Ĵ_SMRDR = Ĵ_BI(1/π_*, q̌)`, with `q̌` refit on every training fold.
pub fn smrdr_estimate(
    data: &StratifiedDataset,
    class: QClass,
    pi_e: &dyn Policy,
    pi_star: Arc<dyn Policy>,
    config: &FitConfig,
    cross_fit: CrossFit,
) -> Result<f64> {
    fitted_estimate(data, VarianceObjectiveKind::Stratified, class, pi_e, pi_star, config, cross_fit)
}

/// Cross-fitted DR estimate with the pooled-variance control variate.
pub fn mrdr_estimate(
    data: &StratifiedDataset,
    class: QClass,
    pi_e: &dyn Policy,
    pi_star: Arc<dyn Policy>,
    config: &FitConfig,
    cross_fit: CrossFit,
) -> Result<f64> {
    fitted_estimate(data, VarianceObjectiveKind::Iid, class, pi_e, pi_star, config, cross_fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{policy_value_exact, sample_stratified, DiscreteEnvironment, RewardModel};
    use crate::estimators::{is_estimate, TabularControl};
    use crate::nuisance::testing::gradient_error;
    use crate::policy::{marginal_policy, FixedPolicy, TabularPolicy, UniformPolicy};
    use crate::stats::summarize;
    use rand::Rng;

    fn loggers() -> Vec<Arc<dyn Policy>> {
        vec![
            Arc::new(TabularPolicy::new(vec![vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap()),
            Arc::new(FixedPolicy::new(vec![0.2, 0.8]).unwrap()),
        ]
    }

    fn fixture(sizes: &[usize], seed: u64) -> (DiscreteEnvironment, StratifiedDataset, Arc<dyn Policy>) {
        let env = DiscreteEnvironment::toy();
        let l = loggers();
        let d = sample_stratified(&env, &l, sizes, seed).unwrap();
        let star = marginal_policy(&l, &d.proportions()).unwrap();
        (env, d, star)
    }

    fn quick() -> FitConfig {
        FitConfig {
            iterations: 300,
            ..FitConfig::default()
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (_, d, star) = fixture(&[40, 60], 1);
        let pi_e = UniformPolicy::new(2);
        let h = InverseMarginal(star);
        let mut rng = rng_from_seed(2);
        for kind in [VarianceObjectiveKind::Stratified, VarianceObjectiveKind::Iid] {
            let obj = VarianceObjective::new(&d, kind, &pi_e, &h).unwrap();
            for _ in 0..20 {
                let theta: Vec<f64> = (0..obj.num_params()).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let p = theta.len();
                let mut grad = vec![0.0; p];
                let v = obj.value_grad(&theta, 1.0, &mut grad);
                let err = gradient_error(|t| obj.value(t, 1.0), &theta, &grad);
                assert!(err < 1e-4, "{kind:?}: {err}");
                let mut gn_grad = vec![0.0; p];
                let mut gn = vec![0.0; p * p];
                let v2 = obj.value_grad_gauss_newton(&theta, 1.0, &mut gn_grad, &mut gn);
                assert!((v - v2).abs() < 1e-12);
                assert!(grad.iter().zip(&gn_grad).all(|(a, b)| (a - b).abs() < 1e-12));
                for a in 0..p {
                    assert!(gn[a * p + a] >= 0.0);
                    for b in 0..p {
                        assert!((gn[a * p + b] - gn[b * p + a]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_generic_evaluation() {
        let (_, d, star) = fixture(&[30, 20], 3);
        let pi_e = UniformPolicy::new(2);
        let h = InverseMarginal(star);
        let obj = VarianceObjective::new(&d, VarianceObjectiveKind::Stratified, &pi_e, &h).unwrap();
        let theta = vec![0.3, -0.2, 0.5, 0.1, 0.7, -1.0];
        let model = QModel::new(Link::binary(), theta.chunks(3).map(<[f64]>::to_vec).collect()).unwrap();
        assert!((obj.value(&theta, 1.0) - obj.evaluate(&model)).abs() < 1e-12);
    }

    #[test]
    fn fit_never_increases_objective() {
        let (_, d, star) = fixture(&[50, 50], 4);
        let pi_e = UniformPolicy::new(2);
        type Fit = fn(&StratifiedDataset, QClass, &dyn Policy, Arc<dyn Policy>, &FitConfig) -> Result<FittedControlVariate>;
        let fits: [(Fit, VarianceObjectiveKind); 2] = [
            (smrdr_fit, VarianceObjectiveKind::Stratified),
            (mrdr_fit, VarianceObjectiveKind::Iid),
        ];
        for (fit, kind) in fits {
            let f = fit(&d, QClass::Logistic { r_max: 1.0 }, &pi_e, star.clone(), &quick()).unwrap();
            assert!(f.trace.windows(2).all(|w| w[1] <= w[0]));
            let zero = QModel::zeros(Link::binary(), 2, 2);
            let h = InverseMarginal(star.clone());
            let obj = VarianceObjective::new(&d, kind, &pi_e, &h).unwrap();
            assert!(f.objective <= obj.evaluate(&zero));
        }
    }

    #[test]
    fn gauss_newton_matches_gradient_descent() {
        let (_, d, star) = fixture(&[60, 140], 6);
        let pi_e = UniformPolicy::new(2);
        let class = QClass::Logistic { r_max: 1.0 };
        let gd = FitConfig {
            iterations: 5000,
            ..FitConfig::default()
        };
        let gn = FitConfig {
            solver: Solver::Newton,
            iterations: 100,
            ..FitConfig::default()
        };
        let a = smrdr_fit(&d, class, &pi_e, star.clone(), &gd).unwrap();
        let b = smrdr_fit(&d, class, &pi_e, star, &gn).unwrap();
        assert!(b.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(b.objective <= a.objective + 1e-6, "{} vs {}", b.objective, a.objective);
    }

    #[test]
    fn single_stratum_objectives_coincide() {
        let env = DiscreteEnvironment::toy();
        let l: Vec<Arc<dyn Policy>> = vec![loggers()[0].clone()];
        let d = sample_stratified(&env, &l, &[80], 5).unwrap();
        let pi_e = UniformPolicy::new(2);
        let class = QClass::Logistic { r_max: 1.0 };
        let s = smrdr_fit(&d, class, &pi_e, l[0].clone(), &quick()).unwrap();
        let m = mrdr_fit(&d, class, &pi_e, l[0].clone(), &quick()).unwrap();
        assert!((s.objective - m.objective).abs() < 1e-8);
    }

    #[test]
    fn stratified_fit_wins_its_own_objective() {
        let (_, d, star) = fixture(&[60, 140], 6);
        let pi_e = TabularPolicy::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let class = QClass::Logistic { r_max: 1.0 };
        let config = FitConfig {
            iterations: 3000,
            ..FitConfig::default()
        };
        let s = smrdr_fit(&d, class, &pi_e, star.clone(), &config).unwrap();
        let m = mrdr_fit(&d, class, &pi_e, star.clone(), &config).unwrap();
        let h = InverseMarginal(star);
        let obj = VarianceObjective::new(&d, VarianceObjectiveKind::Stratified, &pi_e, &h).unwrap();
        assert!(obj.evaluate(&s.model) <= obj.evaluate(&m.model) + 1e-12);
    }

    #[test]
    fn constant_shift_is_invisible_when_ratio_is_one() {
        let env = DiscreteEnvironment::toy();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(UniformPolicy::new(2)), Arc::new(UniformPolicy::new(2))];
        let d = sample_stratified(&env, &l, &[30, 30], 7).unwrap();
        let pi_e = UniformPolicy::new(2);
        let h = InverseMarginal(marginal_policy(&l, &[0.5, 0.5]).unwrap());
        let g = TabularControl {
            table: vec![vec![0.1, 0.7], vec![0.4, 0.3]],
        };
        let shifted = TabularControl {
            table: g.table.iter().map(|r| r.iter().map(|v| v + 2.5).collect()).collect(),
        };
        for kind in [VarianceObjectiveKind::Stratified, VarianceObjectiveKind::Iid] {
            let obj = VarianceObjective::new(&d, kind, &pi_e, &h).unwrap();
            assert!((obj.evaluate(&g) - obj.evaluate(&shifted)).abs() < 1e-12);
        }
    }

    #[test]
    fn rich_class_reaches_value_variance_with_deterministic_rewards() {
        let env = DiscreteEnvironment::with_one_hot_contexts(
            vec![0.4, 0.6],
            vec![vec![0.8, 0.3], vec![0.25, 0.6]],
            RewardModel::Deterministic,
        )
        .unwrap();
        let l = loggers();
        let d = sample_stratified(&env, &l, &[100, 100], 8).unwrap();
        let star = marginal_policy(&l, &[0.5, 0.5]).unwrap();
        let pi_e = UniformPolicy::new(2);
        let truth = TabularControl {
            table: env.q_table().to_vec(),
        };
        let h = InverseMarginal(star.clone());
        let obj = VarianceObjective::new(&d, VarianceObjectiveKind::Stratified, &pi_e, &h).unwrap();
        let at_truth = obj.evaluate(&truth);
        let config = FitConfig {
            iterations: 5000,
            l2_penalty: 0.0,
            ..FitConfig::default()
        };
        let f = smrdr_fit(&d, QClass::Logistic { r_max: 1.0 }, &pi_e, star, &config).unwrap();
        assert!(f.objective <= at_truth + 1e-4, "{} vs {at_truth}", f.objective);
    }

    #[test]
    fn zero_class_cross_fit_equals_is() {
        let (_, d, star) = fixture(&[21, 34], 9);
        let pi_e = UniformPolicy::new(2);
        let is = is_estimate(&d, &pi_e, star.clone()).unwrap();
        for z in [2, 3] {
            let est = smrdr_estimate(&d, QClass::Zero, &pi_e, star.clone(), &quick(), CrossFit::new(z, 1)).unwrap();
            assert!((est - is).abs() < 1e-12);
        }
    }

    #[test]
    fn smrdr_is_unbiased_on_toy() {
        let env = DiscreteEnvironment::toy();
        let l = loggers();
        let pi_e = UniformPolicy::new(2);
        let j = policy_value_exact(&env, &pi_e).unwrap();
        let star = marginal_policy(&l, &[0.4, 0.6]).unwrap();
        let config = FitConfig {
            iterations: 100,
            ..FitConfig::default()
        };
        let est: Vec<f64> = (0..300)
            .map(|m| {
                let d = sample_stratified(&env, &l, &[40, 60], 100 + m).unwrap();
                smrdr_estimate(&d, QClass::Logistic { r_max: 1.0 }, &pi_e, star.clone(), &config, CrossFit::new(2, m))
                    .unwrap()
            })
            .collect();
        let s = summarize(&est);
        assert!((s.mean - j).abs() < 3.0 * s.se, "{} vs {j} (se {})", s.mean, s.se);
    }

    #[test]
    fn overlap_failure_surfaces_as_error() {
        let env = DiscreteEnvironment::toy();
        let l: Vec<Arc<dyn Policy>> = vec![Arc::new(FixedPolicy::point_mass(2, 0))];
        let d = sample_stratified(&env, &l, &[10], 10).unwrap();
        // π_e puts mass on action 0 only, but the declared π_* says action 0 is never logged.
        let wrong_star: Arc<dyn Policy> = Arc::new(FixedPolicy::point_mass(2, 1));
        let pi_e = FixedPolicy::point_mass(2, 0);
        assert!(smrdr_fit(&d, QClass::Logistic { r_max: 1.0 }, &pi_e, wrong_star, &quick()).is_err());
    }
}
