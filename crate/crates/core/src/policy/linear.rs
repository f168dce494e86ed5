use crate::data::Context;
use crate::error::{OpeError, Result};

use super::text::MatrixRecord;
use super::Policy;

/// Per-action affine scores `w_a · [1, s]`.
///
/// Row `a` of the weight matrix is `[bias, w_1, …, w_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    weights: Vec<Vec<f64>>,
}

impl LinearScorer {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        let width = weights.first().map_or(0, Vec::len);
        if weights.is_empty() || width == 0 {
            return Err(OpeError::InvalidArgument("empty weight matrix".into()));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != width) {
            return Err(OpeError::LengthMismatch {
                expected: width,
                got: row.len(),
            });
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(OpeError::NonFinite("scorer weight".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros(num_actions: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim + 1]; num_actions],
        }
    }

    pub fn num_actions(&self) -> usize {
        self.weights.len()
    }

    /// Feature dimension `d` (excluding the intercept).
    pub fn dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn score(&self, features: &[f64], action: usize) -> f64 {
        affine(&self.weights[action], features)
    }

    pub fn fill_scores(&self, features: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = affine(w, features);
        }
    }
}

#[inline]
pub(crate) fn affine(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len() + 1);
    w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// Softmax with max-subtraction.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// `π(a|s) ∝ exp(w_a · [1, s] / temperature)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxPolicy {
    scorer: LinearScorer,
    temperature: f64,
}

impl LinearSoftmaxPolicy {
    pub fn new(scorer: LinearScorer, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(OpeError::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            scorer,
            temperature,
        })
    }

    pub fn scorer(&self) -> &LinearScorer {
        &self.scorer
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn to_record(&self) -> MatrixRecord {
        MatrixRecord::new(
            "softmax",
            self.temperature,
            self.scorer.weights().to_vec(),
        )
    }

    pub fn from_record(record: &MatrixRecord) -> Result<Self> {
        record.expect_tag("softmax")?;
        Self::new(LinearScorer::new(record.rows.clone())?, record.param)
    }
}

impl Policy for LinearSoftmaxPolicy {
    fn num_actions(&self) -> usize {
        self.scorer.num_actions()
    }

    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]) {
        self.scorer.fill_scores(&ctx.features, out);
        for x in out.iter_mut() {
            *x /= self.temperature;
        }
        softmax_in_place(out);
    }
}

/// Point mass on the highest-scoring action; ties go to the lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    scorer: LinearScorer,
}

impl GreedyPolicy {
    pub fn new(scorer: LinearScorer) -> Self {
        Self { scorer }
    }

    pub fn scorer(&self) -> &LinearScorer {
        &self.scorer
    }

    pub fn greedy_action(&self, features: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..self.scorer.num_actions() {
            let s = self.scorer.score(features, a);
            if s > best_score {
                best = a;
                best_score = s;
            }
        }
        best
    }

    pub fn to_record(&self) -> MatrixRecord {
        MatrixRecord::new("greedy", 0.0, self.scorer.weights().to_vec())
    }

    pub fn from_record(record: &MatrixRecord) -> Result<Self> {
        record.expect_tag("greedy")?;
        Ok(Self::new(LinearScorer::new(record.rows.clone())?))
    }
}

impl Policy for GreedyPolicy {
    fn num_actions(&self) -> usize {
        self.scorer.num_actions()
    }

    fn fill_probabilities(&self, ctx: &Context, out: &mut [f64]) {
        out.fill(0.0);
        out[self.greedy_action(&ctx.features)] = 1.0;
    }

    fn probability(&self, ctx: &Context, action: usize) -> f64 {
        if self.greedy_action(&ctx.features) == action {
            1.0
        } else {
            0.0
        }
    }

    fn sample_action(&self, ctx: &Context, _rng: &mut dyn rand::RngCore) -> usize {
        self.greedy_action(&ctx.features)
    }
}
