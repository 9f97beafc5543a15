//! Report structures and their stable JSON encoding.
//!
//! Field order is fixed by struct declaration order and every float is
//! finite, so identical runs serialize to byte-identical JSON.

use serde::{Deserialize, Serialize};

use crate::completion::CompletionPlan;
use crate::error::{Result, ScarError};

/// One fitted step: growth-curve parameters and the per-step requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub j: usize,
    pub alpha: f64,
    pub lambda_star: f64,
    pub n_j_star: u64,
}

/// Plan summary serialized into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub fill: Vec<u64>,
    pub weights: Vec<f64>,
    pub allocations: Vec<u64>,
    pub reserve_budget: f64,
}

impl From<&CompletionPlan> for PlanReport {
    fn from(plan: &CompletionPlan) -> Self {
        Self {
            fill: plan.fill.clone(),
            weights: plan.weights.clone(),
            allocations: plan.allocations.clone(),
            reserve_budget: plan.reserve_budget,
        }
    }
}

/// The four general dataset indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct IndexReport {
    pub S: f64,
    pub C: f64,
    pub A: f64,
    pub R: f64,
}

/// Auxiliary index variants using the unclamped ratio forms; entries are
/// null when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct IndexVariantReport {
    pub S: Option<f64>,
    pub C: Option<f64>,
    pub A: f64,
    pub R: Option<f64>,
}

/// Test accuracies of the four completion arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub primary: f64,
    pub extended: f64,
    pub random: f64,
    pub class_average: f64,
}

/// Degenerate-case markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagsReport {
    /// The plan drew nothing; the coverage index is vacuously 1.
    pub no_completion_needed: bool,
    /// The set-level bound never reaches delta_E; n* = 0.
    pub fds_already_met: bool,
    /// Steps whose bound values were all zero (alpha fixed to 0).
    pub degenerate_steps: Vec<usize>,
}

/// Everything measured and estimated for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityReport {
    pub name: String,
    /// Working-set size (primary + reserve, test rows excluded).
    pub n: u64,
    /// Primary-set size.
    pub n_p: u64,
    /// Extended-set size after completion.
    pub n_e: u64,
    /// Set-level foundation size from the Bonferroni solve.
    pub fds_n_star: u64,
    /// Bottleneck reserve budget from the completion plan.
    pub reserve_bottleneck: f64,
    /// Root of the set-level bound equation; null when no root exists.
    pub t_star: Option<f64>,
    pub per_step: Vec<StepReport>,
    pub plan: PlanReport,
    pub indices: IndexReport,
    pub indices_alg1_variant: IndexVariantReport,
    pub accuracies: AccuracyReport,
    pub flags: FlagsReport,
    /// Set-level epsilon actually used (0.01 ln k unless overridden).
    pub epsilon_e: f64,
}

/// Full pipeline report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub modalities: Vec<ModalityReport>,
    pub config_echo: crate::pipeline::PipelineConfig,
    pub seed: u64,
}

/// General indices from the size fields, with the degenerate-case guards.
pub fn general_indices(n: u64, n_p: u64, n_e: u64, n_star: u64, extended_accuracy: f64) -> IndexReport {
    let s = if n_star == 0 {
        1.0
    } else {
        n.min(n_star) as f64 / n_star as f64
    };
    let c = if n_e == n_p {
        1.0
    } else {
        (n_e - n_p) as f64 / (n - n_p) as f64
    };
    let r = if n == 0 {
        0.0
    } else {
        n.min(n_star) as f64 / n as f64
    };
    IndexReport {
        S: s,
        C: c,
        A: extended_accuracy,
        R: r,
    }
}

/// Unclamped index variants; null where the denominator vanishes.
pub fn variant_indices(n: u64, n_e: u64, n_star: u64, extended_accuracy: f64) -> IndexVariantReport {
    IndexVariantReport {
        S: (n_star > 0).then(|| n as f64 / n_star as f64),
        C: (n_e > 0).then(|| n as f64 / n_e as f64),
        A: extended_accuracy,
        R: (n > 0).then(|| n_star as f64 / n as f64),
    }
}

impl PipelineReport {
    /// Stable pretty-printed JSON with a trailing newline.
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| ScarError::InvalidReport(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let report: PipelineReport =
            serde_json::from_str(json).map_err(|e| ScarError::InvalidReport(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    /// Recheck that every stored index satisfies its defining formula given
    /// the report's own size fields.
    pub fn validate(&self) -> Result<()> {
        for m in &self.modalities {
            if m.n_p > m.n || m.n_e < m.n_p {
                return Err(ScarError::InvalidReport(format!(
                    "modality {}: inconsistent sizes n={}, n_p={}, n_e={}",
                    m.name, m.n, m.n_p, m.n_e
                )));
            }
            let expect = general_indices(m.n, m.n_p, m.n_e, m.fds_n_star, m.accuracies.extended);
            if expect != m.indices {
                return Err(ScarError::InvalidReport(format!(
                    "modality {}: indices do not satisfy their formulas",
                    m.name
                )));
            }
            let expect = variant_indices(m.n, m.n_e, m.fds_n_star, m.accuracies.extended);
            if expect != m.indices_alg1_variant {
                return Err(ScarError::InvalidReport(format!(
                    "modality {}: variant indices do not satisfy their formulas",
                    m.name
                )));
            }
        }
        Ok(())
    }
}
