//! Classification-to-bandit conversion and benchmark data preparation:
//! loading labelled data, the 30/70 train/evaluation split, the deterministic
//! policy and its mixtures, and the ratio-controlled stratified partition.

mod bandit;
mod fixture;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

pub use bandit::{
    build_policy_suite, classification_to_bandit, partition_eval_by_ratio, stratum_sizes_for_ratio, PolicySuite,
    DET_MIXTURE_WEIGHTS,
};
pub use fixture::{accuracy, split_train_eval, synthetic_fixture, train_det_policy, ExperimentSplit, FixtureSpec};
pub use io::{
    load_csv_dataset, parse_csv_dataset, read_bandit_records, write_bandit_records, write_classification_csv,
    LabelColumn,
};

/// Rows of features with integer class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
    /// Original label spellings, indexed by remapped label.
    label_names: Vec<String>,
}

impl ClassificationDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let names = (0..num_classes).map(|c| c.to_string()).collect();
        Self::with_names(features, labels, names)
    }

    pub fn with_names(features: Vec<Vec<f64>>, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(OpeError::LengthMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        let num_classes = label_names.len();
        if let Some(d) = features.first().map(Vec::len) {
            if let Some(i) = features.iter().position(|r| r.len() != d) {
                return Err(OpeError::Parse {
                    row: i + 1,
                    message: format!("expected {d} features, found {}", features[i].len()),
                });
            }
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(OpeError::InvalidArgument(format!(
                "label {} at row {} outside 0..{num_classes}",
                labels[i],
                i + 1
            )));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OpeError::NonFinite("feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            label_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
        }
    }
}
