use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{proportions, Context};
use crate::error::Result;
use crate::estimators::{
    ControlVariate, InverseMarginal, ScaledInverseLogger, SimplexWeights, WeightFunction, ZeroControl,
};
use crate::oracle::{
    exact_moments_iid, exact_moments_stratified, find_dilemma_instances, monte_carlo_variances,
    oracle_precision_weights, DilemmaSearch, FiniteInstance, GammaScore, Moments, TabularWeight,
};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::variance::efficiency_bound;

/// Which exact checks to run. The empty config runs nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremSuiteConfig {
    /// Number of random finite instances.
    pub instances: usize,
    pub seed: u64,
    /// Random simplex weights `λ` per instance for the unbiasedness check.
    pub random_lambdas: usize,
    /// Random constraint-satisfying `(h, g)` per instance for unbiasedness.
    pub unbiased_pairs: usize,
    /// Random `(h, g)` per instance the optimal estimator is compared with.
    pub optimality_pairs: usize,
    /// Random `g` per instance for the stratified-versus-iid check.
    pub random_controls: usize,
    pub dilemma: bool,
    /// Monte Carlo confirmation of the dilemma instances; 0 skips it.
    pub dilemma_replications: usize,
    /// Scales `h` on the first stratum so the weight constraint fails.
    /// The unbiasedness check is then expected to fail.
    pub corrupt_weights: bool,
}

impl Default for TheoremSuiteConfig {
    fn default() -> Self {
        Self {
            instances: 0,
            seed: 0,
            random_lambdas: 5,
            unbiased_pairs: 20,
            optimality_pairs: 100,
            random_controls: 20,
            dilemma: false,
            dilemma_replications: 0,
            corrupt_weights: false,
        }
    }
}

impl TheoremSuiteConfig {
    /// 50 instances, the dilemma search and a million-replication Monte Carlo.
    pub fn standard() -> Self {
        Self {
            instances: 50,
            dilemma: true,
            dilemma_replications: 1_000_000,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Distance to the tolerance; negative when the check fails.
    pub margin: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} (margin {:.3e}) {}", self.name, self.margin, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub checks: Vec<CheckResult>,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Tracks the worst margin of a check across instances.
struct Tally {
    name: &'static str,
    margin: f64,
    detail: String,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            margin: f64::INFINITY,
            detail: String::new(),
        }
    }

    fn record(&mut self, margin: f64, detail: impl FnOnce() -> String) {
        // NaN margins count as failures.
        if !(margin >= self.margin) {
            self.margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
            self.detail = detail();
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.margin >= 0.0,
            margin: self.margin,
            detail: self.detail,
        }
    }
}

struct Scaled<'a> {
    inner: &'a dyn WeightFunction,
    stratum: usize,
    factor: f64,
}

impl WeightFunction for Scaled<'_> {
    fn weight(&self, logger: usize, ctx: &Context, action: usize) -> f64 {
        let w = self.inner.weight(logger, ctx, action);
        if logger == self.stratum {
            w * self.factor
        } else {
            w
        }
    }
}

fn simplex_weights(inst: &FiniteInstance, lambda: &SimplexWeights) -> ScaledInverseLogger {
    let n = inst.n() as f64;
    ScaledInverseLogger {
        loggers: inst.loggers.clone(),
        scale: lambda
            .as_slice()
            .iter()
            .zip(&inst.sizes)
            .map(|(l, &nk)| l * n / nk as f64)
            .collect(),
        floor: 0.0,
    }
}

fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Result<SimplexWeights> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    SimplexWeights::new(raw.into_iter().map(|v| v / total).collect())
}

struct Checker<'a> {
    inst: &'a FiniteInstance,
    corrupt: bool,
}

impl Checker<'_> {
    fn stratified(&self, h: &dyn WeightFunction, g: &dyn ControlVariate) -> Result<Moments> {
        let scaled = Scaled {
            inner: h,
            stratum: 0,
            factor: 1.25,
        };
        let h: &dyn WeightFunction = if self.corrupt { &scaled } else { h };
        let f = GammaScore {
            h,
            g,
            pi_e: self.inst.pi_e.as_ref(),
        };
        exact_moments_stratified(&self.inst.env, &self.inst.loggers, &self.inst.sizes, &f)
    }

    fn iid(&self, h: &dyn WeightFunction, g: &dyn ControlVariate) -> Result<Moments> {
        let f = GammaScore {
            h,
            g,
            pi_e: self.inst.pi_e.as_ref(),
        };
        exact_moments_iid(&self.inst.env, &self.inst.loggers, &self.inst.rho(), self.inst.n(), &f)
    }
}

const EXACT_TOL: f64 = 1e-10;
const ORDER_TOL: f64 = 1e-12;
const STRICT_GAP: f64 = 1e-6;

/// Runs the exact checks selected by `config`.
pub fn run_theorem_suite(config: &TheoremSuiteConfig) -> Result<TheoremReport> {
    let mut report = TheoremReport::default();
    if config.instances > 0 {
        let mut unbiased = Tally::new("unbiasedness");
        let mut order_is = Tally::new("ordering: var IS-Avg >= var IS");
        let mut order_pw = Tally::new("ordering: var IS-Avg >= var IS-PW(oracle)");
        let mut v_star = Tally::new("optimality: variance equals V*/n");
        let mut optimal = Tally::new("optimality: no random pair does better");
        let mut strat = Tally::new("stratified variance <= iid variance");
        let mut strat_eq = Tally::new("stratified equals iid at g = q");
        let mut strict = Tally::new("strict stratified gain found");

        for i in 0..config.instances {
            let inst = FiniteInstance::random(derive_seed(config.seed, &[stream::FIXTURE, i as u64]));
            let mut rng = rng_from_seed(derive_seed(config.seed, &[stream::FIXTURE, i as u64, 1]));
            let j = inst.value();
            let k = inst.num_strata();
            let exact = Checker {
                inst: &inst,
                corrupt: false,
            };
            let for_mean = Checker {
                inst: &inst,
                corrupt: config.corrupt_weights,
            };
            let zero = ZeroControl;
            let is_h = InverseMarginal(inst.pi_star());
            let avg_h = ScaledInverseLogger::unit(inst.loggers.clone());
            let lambda_star = oracle_precision_weights(&inst.env, &inst.loggers, &inst.sizes, inst.pi_e.as_ref())?;
            let pw_h = simplex_weights(&inst, &lambda_star);

            // Unbiasedness.
            let mut check_mean = |label: &str, h: &dyn WeightFunction, g: &dyn ControlVariate| -> Result<()> {
                let m = for_mean.stratified(h, g)?;
                let dev = (m.mean - j).abs();
                unbiased.record(EXACT_TOL - dev, || format!("instance {i}, {label}: |mean - J| = {dev:.3e}"));
                Ok(())
            };
            check_mean("IS", &is_h, &zero)?;
            check_mean("IS-Avg", &avg_h, &zero)?;
            for l in 0..config.random_lambdas {
                let lambda = random_simplex(&mut rng, k)?;
                check_mean(&format!("random lambda {l}"), &simplex_weights(&inst, &lambda), &zero)?;
            }
            for p in 0..config.unbiased_pairs {
                let h = inst.random_constraint_weights(&mut rng);
                let g = inst.random_control(&mut rng);
                check_mean(&format!("random pair {p}"), &h, &g)?;
            }

            // Orderings within the IS family.
            let v_is = exact.stratified(&is_h, &zero)?.variance;
            let v_avg = exact.stratified(&avg_h, &zero)?.variance;
            let v_pw = exact.stratified(&pw_h, &zero)?.variance;
            order_is.record(v_avg - v_is + ORDER_TOL, || {
                format!("instance {i}: IS-Avg {v_avg:.6e}, IS {v_is:.6e}")
            });
            order_pw.record(v_avg - v_pw + ORDER_TOL, || {
                format!("instance {i}: IS-Avg {v_avg:.6e}, IS-PW {v_pw:.6e}")
            });

            // Optimality of (1/π_*, q).
            let q = inst.true_control();
            let v_opt = exact.stratified(&is_h, &q)?.variance;
            let bound = efficiency_bound(&inst.env, inst.pi_e.as_ref(), &inst.loggers, &inst.rho())? / inst.n() as f64;
            let dev = (v_opt - bound).abs();
            v_star.record(EXACT_TOL - dev, || format!("instance {i}: |var - V*/n| = {dev:.3e}"));
            for _ in 0..config.optimality_pairs {
                let h: TabularWeight = inst.random_constraint_weights(&mut rng);
                let g = inst.random_control(&mut rng);
                let v = exact.stratified(&h, &g)?.variance;
                optimal.record(v - v_opt + ORDER_TOL, || {
                    format!("instance {i}: random pair {v:.6e} below optimum {v_opt:.6e}")
                });
            }

            // Stratified against iid sampling.
            let eq_gap = (exact.iid(&is_h, &q)?.variance - v_opt).abs();
            strat_eq.record(EXACT_TOL - eq_gap, || format!("instance {i}: gap {eq_gap:.3e}"));
            let mut best_gap = 0.0f64;
            for _ in 0..config.random_controls {
                let g = inst.random_control(&mut rng);
                let gap = exact.iid(&is_h, &g)?.variance - exact.stratified(&is_h, &g)?.variance;
                best_gap = best_gap.max(gap);
                strat.record(gap + ORDER_TOL, || format!("instance {i}: iid minus stratified {gap:.3e}"));
            }
            let distinct = inst.record().loggers.windows(2).any(|w| w[0] != w[1]);
            if distinct && config.random_controls > 0 {
                strict.record(best_gap - STRICT_GAP, || format!("instance {i}: largest gap {best_gap:.3e}"));
            }
        }
        let mut unbiased = unbiased.finish();
        if config.corrupt_weights {
            unbiased.name.push_str(" (corrupted h)");
        }
        report.checks.push(unbiased);
        report.checks.extend(
            [order_is, order_pw, v_star, optimal, strat, strat_eq]
                .into_iter()
                .map(Tally::finish),
        );
        if config.random_controls > 0 {
            report.checks.push(strict.finish());
        }
    }

    if config.dilemma {
        report.checks.extend(dilemma_checks(config)?);
    }
    Ok(report)
}

fn dilemma_checks(config: &TheoremSuiteConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let found = match find_dilemma_instances(&DilemmaSearch::default()) {
        Ok(f) => f,
        Err(e) => {
            out.push(CheckResult {
                name: "dilemma search".into(),
                passed: false,
                margin: f64::NEG_INFINITY,
                detail: e.to_string(),
            });
            return Ok(out);
        }
    };
    for (label, d) in [("IS better", &found.0), ("IS-PW better", &found.1)] {
        let rel = (d.var_is - d.var_pw).abs() / d.var_is.max(d.var_pw);
        out.push(CheckResult {
            name: format!("dilemma search: {label}"),
            passed: true,
            margin: rel,
            detail: format!(
                "var IS {:.6e}, var IS-PW {:.6e}, sizes {:?}, rho {:?}",
                d.var_is,
                d.var_pw,
                d.instance.sizes,
                proportions(&d.instance.sizes)
            ),
        });
        if config.dilemma_replications > 0 {
            let mc = monte_carlo_variances(d, config.dilemma_replications, derive_seed(config.seed, &[stream::REPLICATION]))?;
            let mc_rel = (mc.var_is - mc.var_pw) / mc.var_is.max(mc.var_pw);
            let exact_sign = (d.var_is - d.var_pw).signum();
            out.push(CheckResult {
                name: format!("dilemma Monte Carlo: {label}"),
                passed: mc.agrees_with(d),
                margin: mc_rel * exact_sign,
                detail: format!(
                    "{} replications: var IS {:.6e}, var IS-PW {:.6e}",
                    mc.replications, mc.var_is, mc.var_pw
                ),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_a_no_op() {
        let cfg: TheoremSuiteConfig = serde_json::from_str("{}").unwrap();
        let r = run_theorem_suite(&cfg).unwrap();
        assert!(r.checks.is_empty() && r.all_passed());
    }

    #[test]
    fn small_suite_passes() {
        let cfg = TheoremSuiteConfig {
            instances: 5,
            optimality_pairs: 10,
            ..TheoremSuiteConfig::default()
        };
        let r = run_theorem_suite(&cfg).unwrap();
        assert!(r.all_passed(), "{r}");
        assert_eq!(r.checks.len(), 8);
    }

    #[test]
    fn corrupted_weights_fail_unbiasedness() {
        let cfg = TheoremSuiteConfig {
            instances: 3,
            optimality_pairs: 0,
            random_controls: 0,
            corrupt_weights: true,
            ..TheoremSuiteConfig::default()
        };
        let r = run_theorem_suite(&cfg).unwrap();
        let c = r.check("unbiasedness (corrupted h)").unwrap();
        assert!(!c.passed && c.margin < 0.0);
        assert!(!r.all_passed());
    }

    #[test]
    fn dilemma_without_monte_carlo() {
        let cfg = TheoremSuiteConfig {
            dilemma: true,
            ..TheoremSuiteConfig::default()
        };
        let r = run_theorem_suite(&cfg).unwrap();
        assert_eq!(r.checks.len(), 2);
        assert!(r.all_passed(), "{r}");
    }
}
