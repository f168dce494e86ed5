use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::nuisance::{FitConfig, Solver};
use crate::pipeline::{FixtureSpec, LabelColumn};

/// The estimators compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "IS-Avg")]
    IsAvg,
    #[serde(rename = "IS-PW")]
    IsPw,
    /// Cross-fitted DR with the pooled propensity; with estimated propensities
    /// this is DR-π̂_*.
    #[serde(rename = "DR")]
    Dr,
    #[serde(rename = "DR-Avg")]
    DrAvg,
    #[serde(rename = "DR-PW")]
    DrPw,
    #[serde(rename = "SMRDR")]
    Smrdr,
    #[serde(rename = "MRDR")]
    Mrdr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Is,
        EstimatorKind::IsAvg,
        EstimatorKind::IsPw,
        EstimatorKind::Dr,
        EstimatorKind::DrAvg,
        EstimatorKind::DrPw,
        EstimatorKind::Smrdr,
        EstimatorKind::Mrdr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Is => "IS",
            EstimatorKind::IsAvg => "IS-Avg",
            EstimatorKind::IsPw => "IS-PW",
            EstimatorKind::Dr => "DR",
            EstimatorKind::DrAvg => "DR-Avg",
            EstimatorKind::DrPw => "DR-PW",
            EstimatorKind::Smrdr => "SMRDR",
            EstimatorKind::Mrdr => "MRDR",
        }
    }

    pub fn is_importance_sampling(&self) -> bool {
        matches!(self, EstimatorKind::Is | EstimatorKind::IsAvg | EstimatorKind::IsPw)
    }

    pub(crate) fn needs_pooled_propensity(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Is | EstimatorKind::Dr | EstimatorKind::Smrdr | EstimatorKind::Mrdr
        )
    }

    pub(crate) fn needs_stratum_propensities(&self) -> bool {
        matches!(
            self,
            EstimatorKind::IsAvg | EstimatorKind::IsPw | EstimatorKind::DrAvg | EstimatorKind::DrPw
        )
    }

    pub(crate) fn needs_q(&self) -> bool {
        matches!(self, EstimatorKind::Dr | EstimatorKind::DrAvg | EstimatorKind::DrPw)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| OpeError::Config(format!("unknown estimator '{s}'")))
    }
}

/// Whether logging propensities are given or fit on the training folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propensities {
    #[default]
    Estimated,
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Fixture(FixtureSpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        label: LabelColumn,
        #[serde(default = "yes")]
        has_header: bool,
    },
}

fn yes() -> bool {
    true
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Fixture(FixtureSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_fraction: f64,
    /// Values of `n_1 / n_2`.
    pub ratios: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub folds: usize,
    pub propensities: Propensities,
    /// Estimated propensities are floored at this value before inversion.
    pub propensity_floor: f64,
    /// Fit of the deterministic base policy on the training split.
    pub policy_fit: FitConfig,
    /// Fits of `q̂` and of the behavior models.
    pub nuisance_fit: FitConfig,
    /// Variance-minimizing control-variate fits (SMRDR and MRDR).
    pub control_variate_fit: FitConfig,
    pub control_variate_starts: usize,
    pub output_dir: Option<PathBuf>,
    /// Write measured wall times into the CSVs. Off by default so that
    /// repeated runs produce byte-identical files.
    pub timings_in_csv: bool,
}

/// Newton fits reach the same optima as long gradient-descent runs in a
/// small fraction of the time, which matters across thousands of replications.
fn second_order() -> FitConfig {
    FitConfig {
        solver: Solver::Newton,
        iterations: 100,
        ..FitConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            train_fraction: 0.3,
            ratios: vec![0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0],
            replications: 200,
            seed: 0,
            estimators: EstimatorKind::ALL.to_vec(),
            folds: 2,
            propensities: Propensities::Estimated,
            propensity_floor: 1e-6,
            policy_fit: FitConfig::default(),
            nuisance_fit: second_order(),
            control_variate_fit: second_order(),
            control_variate_starts: crate::variance::DEFAULT_STARTS,
            output_dir: None,
            timings_in_csv: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| OpeError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OpeError::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return bad(format!("ratios must be positive, got {r}"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.propensity_floor >= 0.0 && self.propensity_floor < 1.0) {
            return bad(format!("propensity_floor must be in [0, 1), got {}", self.propensity_floor));
        }
        for (name, fit) in [
            ("policy_fit", &self.policy_fit),
            ("nuisance_fit", &self.nuisance_fit),
            ("control_variate_fit", &self.control_variate_fit),
        ] {
            fit.validate().map_err(|e| OpeError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}
