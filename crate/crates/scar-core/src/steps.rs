//! One-vs-rest step-function targets.
//!
//! A k-class task is a set of k binary indicators `H_j`; sample `i` is
//! positive for step `j` exactly when its class (true label or cluster
//! pseudo-label) equals `j`. Every sample is positive for exactly one step.

use crate::error::{Result, ScarError};

/// k one-vs-rest binary targets over a fixed sample sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepFunctionSet {
    labels: Vec<u32>,
    k: usize,
}

impl StepFunctionSet {
    /// Build from per-sample class assignments in `[0, k)`.
    pub fn from_labels(labels: Vec<u32>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(ScarError::InvalidLabels("k = 0".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c as usize >= k) {
            return Err(ScarError::InvalidLabels(format!(
                "label {bad} outside [0, {k})"
            )));
        }
        Ok(Self { labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Class assignment of sample `i`.
    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Binary target `Y_ij`: is sample `i` positive for step `j`?
    pub fn target(&self, i: usize, j: usize) -> bool {
        self.labels[i] as usize == j
    }

}
