//! Per-step SCAR measures over a sampling-ratio ladder.
//!
//! For a subset drawn at ratio `r` and a trained probe, the four measures
//! are:
//!
//! * **Scale** `I_s = r`, the down-sampling ratio itself.
//! * **Coverage** `I_c`, the sample-weighted Jensen-Shannon divergence
//!   (base-2, so it lands in `[0, 1]`) between each class's positive-logit
//!   histogram and a Gaussian fitted to it by moments.
//! * **Authenticity** `I_a`, the strict per-step accuracy.
//! * **Richness** `I_r`, the fraction of samples correct on at least one
//!   step (valid plus semi-valid).
//!
//! The valid / semi-valid / invalid partition classifies each sample by
//! whether it is correct on all, some, or none of the k steps.

use crate::error::{Result, ScarError};
use crate::probe::{self, ProbeEval, TrainConfig};
use crate::seed;
use crate::steps::StepFunctionSet;
use crate::store::EmbeddingTable;

const COVERAGE_BINS: usize = 50;

/// Disjoint, exhaustive classification of evaluated samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePartition {
    pub valid_ids: Vec<u64>,
    pub semi_valid_ids: Vec<u64>,
    pub invalid_ids: Vec<u64>,
}

impl SamplePartition {
    pub fn total(&self) -> usize {
        self.valid_ids.len() + self.semi_valid_ids.len() + self.invalid_ids.len()
    }
}

/// The four measures for one step function at one sampling ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ScarPoint {
    /// Step index `j`.
    pub step: usize,
    /// Requested sampling ratio.
    pub ratio: f64,
    pub i_s: f64,
    pub i_c: f64,
    pub i_a: f64,
    pub i_r: f64,
    /// Subset size the point was measured on.
    pub n: usize,
}

/// Classify every evaluated sample as valid (correct on all steps),
/// invalid (wrong on all steps), or semi-valid (anything else).
pub fn partition(eval: &ProbeEval) -> SamplePartition {
    let k = eval.k();
    let mut out = SamplePartition {
        valid_ids: Vec::new(),
        semi_valid_ids: Vec::new(),
        invalid_ids: Vec::new(),
    };
    for i in 0..eval.len() {
        let correct = (0..k).filter(|&j| eval.step_correct(i, j)).count();
        let id = eval.ids[i];
        if correct == k {
            out.valid_ids.push(id);
        } else if correct == 0 {
            out.invalid_ids.push(id);
        } else {
            out.semi_valid_ids.push(id);
        }
    }
    out
}

/// Scale measure: the sampling ratio itself.
pub fn scale(ratio: f64) -> Result<f64> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(ratio)
    } else {
        Err(ScarError::RatioOutOfRange(ratio))
    }
}

/// Authenticity of step `j`: fraction of samples where the step prediction
/// matches its target.
pub fn authenticity(eval: &ProbeEval, j: usize) -> f64 {
    debug_assert!(eval.len() > 0);
    let correct = (0..eval.len()).filter(|&i| eval.step_correct(i, j)).count();
    correct as f64 / eval.len() as f64
}

/// Richness: fraction of samples correct on at least one step.
pub fn richness(part: &SamplePartition) -> f64 {
    let n = part.total();
    debug_assert!(n > 0);
    (part.valid_ids.len() + part.semi_valid_ids.len()) as f64 / n as f64
}

/// Base-2 Jensen-Shannon divergence between two histograms on the same
/// bins. Symmetric, in `[0, 1]`, zero exactly when the histograms agree.
pub fn jensen_shannon_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut jsd = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            jsd += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            jsd += 0.5 * qi * (qi / mi).log2();
        }
    }
    jsd.clamp(0.0, 1.0)
}

fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * (1.0 + libm::erf((x - mean) / (sd * std::f64::consts::SQRT_2)))
}

/// Jensen-Shannon divergence of one class's logit values against the
/// Gaussian fitted to them by empirical moments, both discretized on 50
/// uniform bins over the observed range.
fn class_jsd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        // A single value has no estimable spread.
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        // Degenerate variance: the fitted Gaussian collapses onto the data.
        return 0.0;
    }
    let sd = var.sqrt();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / COVERAGE_BINS as f64;

    let mut empirical = vec![0.0f64; COVERAGE_BINS];
    for &v in values {
        let bin = (((v - min) / width) as usize).min(COVERAGE_BINS - 1);
        empirical[bin] += 1.0;
    }
    empirical.iter_mut().for_each(|e| *e /= n as f64);

    let mut gaussian = vec![0.0f64; COVERAGE_BINS];
    for (i, g) in gaussian.iter_mut().enumerate() {
        let lo = min + i as f64 * width;
        let hi = min + (i + 1) as f64 * width;
        *g = normal_cdf(hi, mean, sd) - normal_cdf(lo, mean, sd);
    }
    let total: f64 = gaussian.iter().sum();
    debug_assert!(total > 0.0);
    gaussian.iter_mut().for_each(|g| *g /= total);

    jensen_shannon_divergence(&empirical, &gaussian)
}

/// Coverage measure over per-class logit groups: the sample-weighted mean
/// of the per-class Gaussian-fit divergences.
pub fn coverage(groups: &[Vec<f64>]) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (c, values) in groups.iter().enumerate() {
        if values.is_empty() {
            return Err(ScarError::EmptyClass(c as u32));
        }
        weighted += values.len() as f64 * class_jsd(values);
        total += values.len();
    }
    Ok(weighted / total as f64)
}

/// Positive-class logit values grouped by true class: group `j` holds
/// `logit_j` of every sample whose label is `j`.
pub fn logit_groups(eval: &ProbeEval) -> Vec<Vec<f64>> {
    let mut groups = vec![Vec::new(); eval.k()];
    for i in 0..eval.len() {
        let j = eval.labels[i] as usize;
        groups[j].push(eval.logit(i, j));
    }
    groups
}

/// Measure all four SCAR quantities for every step at every sampling ratio.
///
/// For each ratio the primary table is subsampled (one nested ladder per
/// seed), a probe is trained on the subset, and the subset itself is
/// evaluated. Returns `k` points per ratio, sorted by `(step, ratio)`.
pub fn measure_ladder(
    primary: &EmbeddingTable,
    step_set: &StepFunctionSet,
    ratios: &[f64],
    seed_value: u64,
    config: &TrainConfig,
) -> Result<Vec<ScarPoint>> {
    if step_set.len() != primary.len() {
        return Err(ScarError::LengthMismatch(format!(
            "{} step targets for {} rows",
            step_set.len(),
            primary.len()
        )));
    }
    for pair in ratios.windows(2) {
        if pair[1] <= pair[0] {
            return Err(ScarError::InvalidConfig(
                "sampling ratios must be strictly ascending".into(),
            ));
        }
    }
    for &r in ratios {
        scale(r)?;
    }

    let labeled = primary.with_labels(step_set.labels().to_vec(), step_set.k())?;
    let mut points = Vec::with_capacity(ratios.len() * step_set.k());
    for (idx, &ratio) in ratios.iter().enumerate() {
        let selection = labeled.subsample(ratio, seed_value)?;
        let subset = labeled.take_selection(&selection)?;
        let (train_t, val_t) =
            probe::train_val_split(&subset, seed::derive(seed_value, "ladder_val", idx as u64))?;
        let probe_config = config
            .clone()
            .with_seed(seed::derive(seed_value, "ladder_probe", idx as u64));
        let model = probe::train(&train_t, &val_t, &probe_config)?;
        let eval = probe::evaluate(&model, &subset)?;

        let part = partition(&eval);
        let i_c = coverage(&logit_groups(&eval))?;
        let i_r = richness(&part);
        for j in 0..step_set.k() {
            points.push(ScarPoint {
                step: j,
                ratio,
                i_s: ratio,
                i_c,
                i_a: authenticity(&eval, j),
                i_r,
                n: subset.len(),
            });
        }
    }
    points.sort_by(|a, b| a.step.cmp(&b.step).then(a.ratio.total_cmp(&b.ratio)));
    Ok(points)
}

/// Render points as CSV with header `step,ratio,I_s,I_c,I_a,I_r,n`.
pub fn points_to_csv(points: &[ScarPoint]) -> String {
    let mut out = String::from("step,ratio,I_s,I_c,I_a,I_r,n\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.step, p.ratio, p.i_s, p.i_c, p.i_a, p.i_r, p.n
        ));
    }
    out
}
