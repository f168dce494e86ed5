use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::estimators::{InverseMarginal, ZeroControl};
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::{exact_moments_stratified, oracle_precision_weights, FiniteInstance, GammaScore, InstanceRecord};

/// Grid searched for instances on which IS and oracle-weighted IS-PW swap
/// order.
///
/// Every instance has two equiprobable contexts, two actions, a uniform
/// evaluation policy and two loggers `π_k = α_k δ_{base_k} + (1 − α_k) uniform`.
/// The `q` table ranges over `q_grid⁴`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DilemmaSearch {
    pub q_grid: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Actions the two loggers tilt towards.
    pub bases: [usize; 2],
    pub sizes: [usize; 2],
    /// Absolute margin below which the variances count as equal.
    pub margin: f64,
    /// Minimum relative variance gap, so that Monte Carlo can confirm the order.
    pub min_relative_gap: f64,
}

impl Default for DilemmaSearch {
    fn default() -> Self {
        Self {
            q_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            alphas: vec![0.1, 0.5, 0.9],
            bases: [0, 1],
            sizes: [10, 10],
            margin: 1e-9,
            min_relative_gap: 0.05,
        }
    }
}

/// One side of the dilemma, with its exact variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilemmaInstance {
    pub instance: InstanceRecord,
    pub lambda_star: Vec<f64>,
    pub var_is: f64,
    pub var_pw: f64,
}

fn tilted(alpha: f64, base: usize) -> Vec<Vec<f64>> {
    let row: Vec<f64> = (0..2)
        .map(|a| (1.0 - alpha) / 2.0 + if a == base { alpha } else { 0.0 })
        .collect();
    vec![row.clone(), row]
}

fn exact_pair(inst: &FiniteInstance) -> Result<(Vec<f64>, f64, f64)> {
    let pi_e = inst.pi_e.as_ref();
    let h = InverseMarginal(inst.pi_star());
    let var_is = exact_moments_stratified(
        &inst.env,
        &inst.loggers,
        &inst.sizes,
        &GammaScore {
            h: &h,
            g: &ZeroControl,
            pi_e,
        },
    )?
    .variance;
    let lambda = oracle_precision_weights(&inst.env, &inst.loggers, &inst.sizes, pi_e)?;
    // Υ(D; λ) with fixed λ has variance Σ_k λ_k² var_k / n_k.
    let mut var_pw = 0.0;
    for (k, l) in inst.loggers.iter().enumerate() {
        let lk = lambda.as_slice()[k];
        if lk == 0.0 {
            continue;
        }
        let score = |_: usize, ctx: &crate::data::Context, a: usize, r: f64| {
            let pe = pi_e.probability(ctx, a);
            if pe == 0.0 {
                0.0
            } else {
                pe * r / l.probability(ctx, a)
            }
        };
        let m = super::logger_moments(&inst.env, l.as_ref(), k, &score)?;
        var_pw += lk * lk * m.variance / inst.sizes[k] as f64;
    }
    Ok((lambda.as_slice().to_vec(), var_is, var_pw))
}

/// Scans the grid in order and returns the first instance with
/// `var[IS] < var[IS-PW(λ*)]` and the first with the reverse order.
pub fn find_dilemma_instances(search: &DilemmaSearch) -> Result<(DilemmaInstance, DilemmaInstance)> {
    let g = &search.q_grid;
    let mut is_wins: Option<DilemmaInstance> = None;
    let mut pw_wins: Option<DilemmaInstance> = None;
    let tables = g.iter().flat_map(|&a| {
        g.iter()
            .flat_map(move |&b| g.iter().flat_map(move |&c| g.iter().map(move |&d| vec![vec![a, b], vec![c, d]])))
    });
    'outer: for q in tables {
        for &a1 in &search.alphas {
            for &a2 in &search.alphas {
                let record = InstanceRecord {
                    context_probs: vec![0.5, 0.5],
                    q: q.clone(),
                    r_max: 1.0,
                    loggers: vec![tilted(a1, search.bases[0]), tilted(a2, search.bases[1])],
                    pi_e: vec![vec![0.5, 0.5]; 2],
                    sizes: search.sizes.to_vec(),
                };
                let inst = FiniteInstance::from_record(record.clone())?;
                let (lambda_star, var_is, var_pw) = exact_pair(&inst)?;
                let found = DilemmaInstance {
                    instance: record,
                    lambda_star,
                    var_is,
                    var_pw,
                };
                let gap = |lo: f64, hi: f64| hi - lo > search.margin && (hi - lo) >= search.min_relative_gap * hi;
                if is_wins.is_none() && gap(var_is, var_pw) {
                    is_wins = Some(found);
                } else if pw_wins.is_none() && gap(var_pw, var_is) {
                    pw_wins = Some(found);
                }
                if is_wins.is_some() && pw_wins.is_some() {
                    break 'outer;
                }
            }
        }
    }
    match (is_wins, pw_wins) {
        (Some(a), Some(b)) => Ok((a, b)),
        (a, b) => Err(OpeError::SearchExhausted(format!(
            "IS-better instance {}, IS-PW-better instance {}",
            if a.is_some() { "found" } else { "missing" },
            if b.is_some() { "found" } else { "missing" },
        ))),
    }
}

/// Sample variances of IS and of `Υ(D; λ*)` across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McVariances {
    pub replications: usize,
    pub var_is: f64,
    pub var_pw: f64,
}

impl McVariances {
    /// Whether the sample variances order the estimators like the exact ones.
    pub fn agrees_with(&self, found: &DilemmaInstance) -> bool {
        (self.var_is < self.var_pw) == (found.var_is < found.var_pw)
    }
}

/// Per-logger outcome table: cumulative probability, IS score, per-logger IS score.
fn outcome_tables(inst: &FiniteInstance) -> Vec<Vec<(f64, f64, f64)>> {
    let star = inst.pi_star();
    inst.loggers
        .iter()
        .map(|l| {
            let mut acc = 0.0;
            let mut rows = Vec::new();
            for (ctx, &ps) in inst.env.contexts().iter().zip(inst.env.context_probs()) {
                let pe = inst.pi_e.probabilities(ctx);
                let pl = l.probabilities(ctx);
                let pst = star.probabilities(ctx);
                for a in 0..inst.env.num_actions() {
                    for (r, pr) in inst.env.reward_support(ctx.id, a) {
                        let p = ps * pl[a] * pr;
                        if p == 0.0 {
                            continue;
                        }
                        acc += p;
                        let (s_is, s_k) = if pe[a] == 0.0 {
                            (0.0, 0.0)
                        } else {
                            (pe[a] * r / pst[a], pe[a] * r / pl[a])
                        };
                        rows.push((acc, s_is, s_k));
                    }
                }
            }
            rows
        })
        .collect()
}

/// Monte Carlo check of a found instance: draws `replications` stratified
/// datasets directly from the outcome tables and returns the sample variances.
pub fn monte_carlo_variances(found: &DilemmaInstance, replications: usize, seed: u64) -> Result<McVariances> {
    const CHUNK: usize = 10_000;
    if replications < 2 {
        return Err(OpeError::InvalidArgument("need at least 2 replications".into()));
    }
    let inst = FiniteInstance::from_record(found.instance.clone())?;
    let tables = Arc::new(outcome_tables(&inst));
    let sizes = inst.sizes.clone();
    let n = inst.n() as f64;
    let lambda = found.lambda_star.clone();
    let centre = inst.value();
    let chunks = replications.div_ceil(CHUNK);
    // Sums of centred values and squares, per chunk, combined in order.
    let parts: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, &[stream::REPLICATION, c as u64]));
            let reps = CHUNK.min(replications - c * CHUNK);
            let mut acc = [0.0; 4];
            for _ in 0..reps {
                let mut is = 0.0;
                let mut pw = 0.0;
                for (k, table) in tables.iter().enumerate() {
                    let mut sum_k = 0.0;
                    let total = table.last().map_or(1.0, |t| t.0);
                    for _ in 0..sizes[k] {
                        let u: f64 = rng.gen::<f64>() * total;
                        let i = table.partition_point(|t| t.0 <= u).min(table.len() - 1);
                        is += table[i].1;
                        sum_k += table[i].2;
                    }
                    if sizes[k] > 0 {
                        pw += lambda[k] * sum_k / sizes[k] as f64;
                    }
                }
                let (is, pw) = (is / n - centre, pw - centre);
                acc[0] += is;
                acc[1] += is * is;
                acc[2] += pw;
                acc[3] += pw * pw;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for p in parts {
        for j in 0..4 {
            tot[j] += p[j];
        }
    }
    let m = replications as f64;
    let var = |s: f64, s2: f64| (s2 - s * s / m) / (m - 1.0);
    Ok(McVariances {
        replications,
        var_is: var(tot[0], tot[1]),
        var_pw: var(tot[2], tot[3]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_finds_both_orders() {
        let (a, b) = find_dilemma_instances(&DilemmaSearch::default()).unwrap();
        assert!(a.var_is < a.var_pw);
        assert!(b.var_pw < b.var_is);
        assert_ne!(a.instance, b.instance);
    }

    #[test]
    fn identical_loggers_never_qualify() {
        let search = DilemmaSearch {
            alphas: vec![0.5],
            bases: [0, 0],
            ..DilemmaSearch::default()
        };
        assert!(matches!(find_dilemma_instances(&search), Err(OpeError::SearchExhausted(_))));
    }

    #[test]
    fn monte_carlo_tracks_exact_variances() {
        let (a, _) = find_dilemma_instances(&DilemmaSearch::default()).unwrap();
        let mc = monte_carlo_variances(&a, 40_000, 3).unwrap();
        assert!((mc.var_is - a.var_is).abs() < 0.05 * a.var_is);
        assert!((mc.var_pw - a.var_pw).abs() < 0.05 * a.var_pw);
    }
}
