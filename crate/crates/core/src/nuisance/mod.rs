//! Logistic nuisance models: per-action reward regressions `q̂` and the
//! multinomial behavior model `π̂_*`, both fit by full-batch gradient descent
//! or, optionally, by damped Newton steps.

mod behavior;
mod q;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LoggedSample;
use crate::error::{OpeError, Result};

pub use behavior::{behavior_objective, fit_behavior, fit_behavior_traced, BehaviorModel, LogisticBehaviorFitter};
pub use q::{fit_q, fit_q_traced, q_objective, Link, LogisticQFitter, QModel};

/// Optimizer used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Fixed-step full-batch gradient descent for exactly `iterations` steps
    /// (the variance fits backtrack instead of using a fixed step).
    #[default]
    Gradient,
    /// Damped Newton steps (Gauss-Newton for the variance objectives), at
    /// most `iterations` of them, stopping once the loss stops decreasing.
    /// `learning_rate` is ignored.
    Newton,
}

/// Optimizer settings shared by every fit in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub solver: Solver,
    /// Ridge penalty on non-intercept weights.
    pub l2_penalty: f64,
    /// Used only by optimizers with random restarts.
    pub seed: u64,
    /// Fit on standardized features; weights are mapped back to raw scale.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 2000,
            solver: Solver::Gradient,
            l2_penalty: 1e-4,
            seed: 0,
            standardize: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(OpeError::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "l2 penalty must be nonnegative, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

/// Minimizes a smooth loss from `w` with Levenberg-damped Newton steps.
///
/// `eval(w, grad, hess)` returns the loss and fills the gradient and a
/// positive semidefinite Hessian (row-major). Only steps that do not increase
/// the loss are taken, so the returned trace is non-increasing.
pub(crate) fn damped_newton(
    mut w: Vec<f64>,
    iterations: usize,
    mut eval: impl FnMut(&[f64], &mut [f64], &mut [f64]) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    let p = w.len();
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    let mut cand_grad = vec![0.0; p];
    let mut cand_hess = vec![0.0; p * p];
    let mut f = eval(&w, &mut grad, &mut hess);
    let mut trace = vec![f];
    if p == 0 {
        return (w, trace);
    }
    let mut damping = 1e-10;
    for _ in 0..iterations {
        if !f.is_finite() {
            break;
        }
        let scale = (0..p).map(|i| hess[i * p + i].abs()).fold(1e-12, f64::max);
        let rhs = DVector::from_iterator(p, grad.iter().map(|g| -g));
        let mut accepted = None;
        for _ in 0..40 {
            let mut m = DMatrix::from_row_slice(p, p, &hess);
            for i in 0..p {
                m[(i, i)] += damping * scale;
            }
            if let Some(chol) = m.cholesky() {
                let step = chol.solve(&rhs);
                let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
                let fc = eval(&cand, &mut cand_grad, &mut cand_hess);
                if fc.is_finite() && fc <= f {
                    accepted = Some((cand, fc, step.amax()));
                    break;
                }
            }
            damping = (damping * 10.0).max(1e-8);
        }
        let Some((cand, fc, step)) = accepted else {
            break;
        };
        let gain = f - fc;
        w = cand;
        std::mem::swap(&mut grad, &mut cand_grad);
        std::mem::swap(&mut hess, &mut cand_hess);
        f = fc;
        trace.push(f);
        damping = (damping * 0.1).max(1e-12);
        if gain <= 1e-14 * (1.0 + f.abs()) || step < 1e-12 {
            break;
        }
    }
    (w, trace)
}

/// Adds `c x̃ x̃ᵀ`, with `x̃ = [1, x]`, to the square block starting at
/// `(row, col)` of a row-major `p × p` matrix.
pub(crate) fn add_outer(hess: &mut [f64], p: usize, row: usize, col: usize, x: &[f64], c: f64) {
    let width = x.len() + 1;
    for j in 0..width {
        let xj = if j == 0 { 1.0 } else { x[j - 1] };
        let base = (row + j) * p + col;
        for l in 0..width {
            let xl = if l == 0 { 1.0 } else { x[l - 1] };
            hess[base + l] += c * xj * xl;
        }
    }
}

/// Samples merged by identical feature vectors, with per-group statistics.
#[derive(Debug, Clone)]
pub(crate) struct Grouped<T> {
    pub features: Vec<Arc<[f64]>>,
    pub stats: Vec<T>,
}

impl<T> Grouped<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }
}

pub(crate) fn feature_dim<'a>(samples: impl IntoIterator<Item = &'a LoggedSample>) -> Result<Option<usize>> {
    let mut dim = None;
    for s in samples {
        let d = s.context.dim();
        match dim {
            None => dim = Some(d),
            Some(e) if e != d => return Err(OpeError::LengthMismatch { expected: e, got: d }),
            _ => {}
        }
    }
    Ok(dim)
}

/// Groups are emitted in order of first appearance, so fits are deterministic.
pub(crate) fn group_by_features<'a, T, I, F>(samples: I, mut update: F) -> Grouped<T>
where
    T: Default,
    I: IntoIterator<Item = &'a LoggedSample>,
    F: FnMut(&mut T, &LoggedSample),
{
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out = Grouped {
        features: Vec::new(),
        stats: Vec::new(),
    };
    for s in samples {
        let key: Vec<u64> = s.context.features.iter().map(|v| v.to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            out.features.push(s.context.features.clone());
            out.stats.push(T::default());
            out.features.len() - 1
        });
        update(&mut out.stats[g], s);
    }
    out
}

/// Affine feature map `x ↦ (x − m)/sd`, identity when standardization is off.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<T>(groups: &Grouped<T>, dim: usize, counts: impl Fn(&T) -> f64, enabled: bool) -> Self {
        if !enabled {
            return Self {
                mean: vec![0.0; dim],
                scale: vec![1.0; dim],
            };
        }
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut total = 0.0;
        for (x, t) in groups.features.iter().zip(&groups.stats) {
            let c = counts(t);
            total += c;
            for j in 0..dim {
                mean[j] += c * x[j];
                sq[j] += c * x[j] * x[j];
            }
        }
        let total = total.max(1.0);
        let scale = (0..dim)
            .map(|j| {
                let m = mean[j] / total;
                let v = sq[j] / total - m * m;
                if v > 1e-12 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        mean.iter_mut().for_each(|m| *m /= total);
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Maps weights fit on standardized features back to raw features.
    pub fn unfold(&self, w: &mut [f64]) {
        for j in 0..self.mean.len() {
            w[j + 1] /= self.scale[j];
            w[0] -= w[j + 1] * self.mean[j];
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `(l2/2)·Σ_{j≥1} w_j²` added to `loss`, `l2·w_j` added to `grad`.
pub(crate) fn add_ridge(w: &[f64], l2: f64, loss: &mut f64, grad: &mut [f64]) {
    if l2 == 0.0 {
        return;
    }
    for j in 1..w.len() {
        *loss += 0.5 * l2 * w[j] * w[j];
        grad[j] += l2 * w[j];
    }
}

/// Hessian of [`add_ridge`] for the block of `width` weights at `offset`.
pub(crate) fn add_ridge_hessian(hess: &mut [f64], p: usize, offset: usize, width: usize, l2: f64) {
    for j in offset + 1..offset + width {
        hess[j * p + j] += l2;
    }
}
