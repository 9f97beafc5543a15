//! End-to-end orchestration: step construction, splits, ladder measurement,
//! foundation-size estimation, completion, and final evaluation.
//!
//! Each phase draws its randomness from a sub-seed derived from the single
//! configured seed, so a whole run is a pure function of
//! `(tables, config)`.

use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterModel};
use crate::completion::{self, BaselineKind};
use crate::error::{Result, ScarError};
use crate::fds;
use crate::metrics::{self, ScarPoint};
use crate::probe::{self, TrainConfig};
use crate::report::{
    self, AccuracyReport, FlagsReport, ModalityReport, PipelineReport, PlanReport, StepReport,
};
use crate::seed;
use crate::steps::StepFunctionSet;
use crate::store::EmbeddingTable;

/// Full pipeline configuration with the protocol defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Input files, echoed into the report.
    pub modality_paths: Vec<String>,
    /// Step count for pseudo-labeling; must match the label count when the
    /// table is labeled.
    pub k: usize,
    /// Primary share of the train part.
    pub split_ratio: f64,
    pub sampling_ratios: Vec<f64>,
    pub delta_star: f64,
    pub epsilon_star: f64,
    /// Bonferroni truncation order (clamped to the step count, kept odd).
    pub k_prime: usize,
    pub delta_e: f64,
    /// Set-level epsilon; `None` means the default rule `0.01 ln k`.
    pub epsilon_e: Option<f64>,
    pub probe: TrainConfig,
    pub seed: u64,
    /// Use `1 - I_c` instead of `I_c` as the bound multiplier.
    pub coverage_as_delta: bool,
    /// L2-normalize every embedding row before any other phase.
    pub normalize: bool,
}

impl PipelineConfig {
    pub fn new(k: usize) -> Self {
        Self {
            modality_paths: Vec::new(),
            k,
            split_ratio: 0.6,
            sampling_ratios: vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            delta_star: 0.01,
            epsilon_star: 0.01,
            k_prime: 3,
            delta_e: 0.01,
            epsilon_e: None,
            probe: TrainConfig::default(),
            seed: 0,
            coverage_as_delta: false,
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(ScarError::InvalidConfig("k must be at least 2".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(ScarError::InvalidConfig(format!(
                "split ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if self.sampling_ratios.len() < 3 {
            return Err(ScarError::InvalidConfig(
                "need at least 3 sampling ratios for the growth fit".into(),
            ));
        }
        for pair in self.sampling_ratios.windows(2) {
            if pair[1] <= pair[0] {
                return Err(ScarError::InvalidConfig(
                    "sampling ratios must be strictly ascending".into(),
                ));
            }
        }
        for &r in &self.sampling_ratios {
            if !(r > 0.0 && r <= 1.0) {
                return Err(ScarError::RatioOutOfRange(r));
            }
        }
        for (name, v) in [
            ("delta_star", self.delta_star),
            ("epsilon_star", self.epsilon_star),
            ("delta_E", self.delta_e),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ScarError::InvalidConfig(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if let Some(e) = self.epsilon_e {
            if e <= 0.0 {
                return Err(ScarError::InvalidConfig("epsilon_E must be positive".into()));
            }
        }
        if self.k_prime == 0 {
            return Err(ScarError::InvalidConfig("k_prime must be at least 1".into()));
        }
        self.probe.validate()
    }

    /// Set-level epsilon: the override or `0.01 ln k`.
    pub fn resolved_epsilon_e(&self, k: usize) -> f64 {
        self.epsilon_e.unwrap_or(0.01 * (k as f64).ln())
    }

    /// Truncation order actually used: at most `k`, forced odd.
    pub fn effective_k_prime(&self, k: usize) -> usize {
        let mut kp = self.k_prime.min(k).max(1);
        if kp % 2 == 0 {
            kp -= 1;
        }
        kp
    }
}

/// Where the step-function targets come from.
#[derive(Debug, Clone)]
pub enum StepSource {
    /// Use the table's own labels.
    TableLabels,
    /// Pseudo-label the table by k-means with the configured k.
    Cluster,
    /// Externally supplied targets (cross-modal supervision).
    Provided(StepFunctionSet),
}

/// Labeling rule for external reserve pools.
#[derive(Debug, Clone)]
pub enum StepLabeler {
    /// Pool samples carry their own class labels.
    ByLabels,
    /// Assign pool samples to the fitted cluster model.
    Model(ClusterModel),
}

/// Step-labeled working material for one modality.
#[derive(Debug, Clone)]
pub struct PreparedModality {
    pub k: usize,
    /// Train part (primary + reserve), step-labeled.
    pub work: EmbeddingTable,
    /// Frozen test part, step-labeled.
    pub test: EmbeddingTable,
    pub primary: EmbeddingTable,
    pub reserve: EmbeddingTable,
    pub labeler: StepLabeler,
}

/// Build step targets, freeze the test split, and cut primary/reserve.
///
/// The test part comes from the table's split tags when present, otherwise
/// from a stratified 80/20 carve-out; either way it is fixed before any
/// other phase and shared by every completion arm.
pub fn prepare_modality(
    table: &EmbeddingTable,
    source: &StepSource,
    config: &PipelineConfig,
) -> Result<PreparedModality> {
    config.validate()?;
    let normalized;
    let table = if config.normalize {
        normalized = table.l2_normalized();
        &normalized
    } else {
        table
    };
    let (labels, k, labeler) = match source {
        StepSource::TableLabels => {
            let labels = table.labels().ok_or(ScarError::MissingLabels)?.to_vec();
            let k = table.num_classes().unwrap();
            if config.k != k {
                return Err(ScarError::InvalidConfig(format!(
                    "configured k = {} but table declares {k} classes",
                    config.k
                )));
            }
            (labels, k, StepLabeler::ByLabels)
        }
        StepSource::Cluster => {
            let model = cluster::fit_kmeans(table, config.k, seed::derive(config.seed, "kmeans", 0))?;
            let labels = cluster::assign(&model, table)?;
            (labels, config.k, StepLabeler::Model(model))
        }
        StepSource::Provided(steps) => {
            if steps.len() != table.len() {
                return Err(ScarError::LengthMismatch(format!(
                    "{} step targets for {} rows",
                    steps.len(),
                    table.len()
                )));
            }
            (steps.labels().to_vec(), steps.k(), StepLabeler::ByLabels)
        }
    };
    let full = table.with_labels(labels, k)?;
    let (work, test) = match full.partition_by_split() {
        Some((w, t)) if !w.is_empty() && !t.is_empty() => (w, t),
        _ => full.stratified_split(0.8, seed::derive(config.seed, "test_carve", 0))?,
    };
    let (primary, reserve) =
        work.stratified_split(config.split_ratio, seed::derive(config.seed, "primary_split", 0))?;
    Ok(PreparedModality {
        k,
        work,
        test,
        primary,
        reserve,
        labeler,
    })
}

/// Step-label an external reserve pool under the modality's labeling rule.
pub fn label_pool(
    labeler: &StepLabeler,
    pool: &EmbeddingTable,
    k: usize,
) -> Result<EmbeddingTable> {
    match labeler {
        StepLabeler::ByLabels => {
            let labels = pool.labels().ok_or(ScarError::MissingLabels)?;
            if pool.num_classes() != Some(k) {
                return Err(ScarError::InvalidLabels(format!(
                    "pool declares {:?} classes, expected {k}",
                    pool.num_classes()
                )));
            }
            pool.with_labels(labels.to_vec(), k)
        }
        StepLabeler::Model(model) => {
            let labels = cluster::assign(model, pool)?;
            pool.with_labels(labels, k)
        }
    }
}

/// Actual extension sizes of the three completion arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtensionSizes {
    pub scar: u64,
    pub random: u64,
    pub class_average: u64,
}

/// Report plus the raw measurements behind it.
#[derive(Debug, Clone)]
pub struct ModalityOutcome {
    pub report: ModalityReport,
    pub points: Vec<ScarPoint>,
    pub extension_sizes: ExtensionSizes,
}

/// Run the four phases for one modality.
pub fn run_single_modality(
    table: &EmbeddingTable,
    source: &StepSource,
    config: &PipelineConfig,
) -> Result<ModalityOutcome> {
    run_named_modality(table, source, table.modality(), config)
}

fn run_named_modality(
    table: &EmbeddingTable,
    source: &StepSource,
    name: &str,
    config: &PipelineConfig,
) -> Result<ModalityOutcome> {
    let prepared = prepare_modality(table, source, config)?;
    let k = prepared.k;
    let primary = &prepared.primary;
    let reserve = &prepared.reserve;
    let test = &prepared.test;

    // Phase 2: ladder measurement and foundation-size estimation.
    let steps_primary = StepFunctionSet::from_labels(primary.labels().unwrap().to_vec(), k)?;
    let points = metrics::measure_ladder(
        primary,
        &steps_primary,
        &config.sampling_ratios,
        seed::derive(config.seed, "ladder", 0),
        &config.probe,
    )?;

    let per_ratio = config.sampling_ratios.len();
    let mut fits = Vec::with_capacity(k);
    let mut degenerate_steps = Vec::new();
    for j in 0..k {
        let slice = &points[j * per_ratio..(j + 1) * per_ratio];
        let fit_input: Vec<ScarPoint> = if config.coverage_as_delta {
            slice
                .iter()
                .map(|p| ScarPoint {
                    i_c: 1.0 - p.i_c,
                    ..p.clone()
                })
                .collect()
        } else {
            slice.to_vec()
        };
        match fds::fit_growth(&fit_input) {
            Ok(fit) => fits.push(fit),
            Err(ScarError::AllZeroBounds) => {
                degenerate_steps.push(j);
                fits.push(fds::ConceptFit::zero(j, fit_input.len()));
            }
            Err(e) => return Err(e),
        }
    }
    let per_step_n_star: Vec<u64> = fits
        .iter()
        .map(|f| fds::per_step_fds(f, config.delta_star, config.epsilon_star))
        .collect();
    let alphas: Vec<f64> = fits.iter().map(|f| f.alpha).collect();
    let epsilon_e = config.resolved_epsilon_e(k);
    let solution = fds::set_level_fds(
        &alphas,
        config.delta_e,
        epsilon_e,
        config.effective_k_prime(k),
    )?;

    // Phase 3: completion plan from primary holdings and reserve counts.
    let primary_counts: Vec<u64> = primary.class_counts()?.iter().map(|&c| c as u64).collect();
    let reserve_counts: Vec<u64> = reserve.class_counts()?.iter().map(|&c| c as u64).collect();
    let mut plan = completion::plan(
        primary.len() as u64,
        solution.n_star,
        &primary_counts,
        &per_step_n_star,
        &reserve_counts,
    )?;

    // Phase 4: materialize every arm and evaluate on the frozen test split.
    let extended = completion::materialize(
        &mut plan,
        primary,
        reserve,
        seed::derive(config.seed, "materialize", 0),
    )?;
    let budget = plan.total_allocated();
    let mut random_plan = completion::baseline_plan(
        BaselineKind::Random,
        budget,
        &reserve_counts,
        seed::derive(config.seed, "baseline", 0),
    );
    let random_ext = completion::materialize(
        &mut random_plan,
        primary,
        reserve,
        seed::derive(config.seed, "materialize", 1),
    )?;
    let mut avg_plan = completion::baseline_plan(
        BaselineKind::ClassAverage,
        budget,
        &reserve_counts,
        seed::derive(config.seed, "baseline", 1),
    );
    let avg_ext = completion::materialize(
        &mut avg_plan,
        primary,
        reserve,
        seed::derive(config.seed, "materialize", 2),
    )?;

    let accuracy = |arm: u64, train_table: &EmbeddingTable| -> Result<f64> {
        let cfg = config
            .probe
            .clone()
            .with_seed(seed::derive(config.seed, "final_probe", arm));
        let model = probe::train(train_table, test, &cfg)?;
        Ok(probe::evaluate(&model, test)?.accuracy)
    };
    let primary_acc = accuracy(0, primary)?;
    let extended_acc = accuracy(1, &extended)?;
    let random_acc = accuracy(2, &random_ext)?;
    let avg_acc = accuracy(3, &avg_ext)?;

    let n = prepared.work.len() as u64;
    let n_p = primary.len() as u64;
    let n_e = extended.len() as u64;
    let indices = report::general_indices(n, n_p, n_e, solution.n_star, extended_acc);
    let variant = report::variant_indices(n, n_e, solution.n_star, extended_acc);

    let report = ModalityReport {
        name: name.to_string(),
        n,
        n_p,
        n_e,
        fds_n_star: solution.n_star,
        reserve_bottleneck: plan.reserve_budget,
        t_star: solution.t_star,
        per_step: fits
            .iter()
            .zip(&per_step_n_star)
            .map(|(f, &n_j)| StepReport {
                j: f.step,
                alpha: f.alpha,
                lambda_star: f.lambda_star,
                n_j_star: n_j,
            })
            .collect(),
        plan: PlanReport::from(&plan),
        indices,
        indices_alg1_variant: variant,
        accuracies: AccuracyReport {
            primary: primary_acc,
            extended: extended_acc,
            random: random_acc,
            class_average: avg_acc,
        },
        flags: FlagsReport {
            no_completion_needed: plan.is_zero(),
            fds_already_met: solution.already_met,
            degenerate_steps,
        },
        epsilon_e,
    };
    Ok(ModalityOutcome {
        report,
        points,
        extension_sizes: ExtensionSizes {
            scar: extended.len() as u64 - n_p,
            random: random_ext.len() as u64 - n_p,
            class_average: avg_ext.len() as u64 - n_p,
        },
    })
}

/// Single-modality entry point producing a complete report.
pub fn run_pipeline(
    table: &EmbeddingTable,
    source: &StepSource,
    config: &PipelineConfig,
) -> Result<(PipelineReport, Vec<ModalityOutcome>)> {
    let outcome = run_single_modality(table, source, config)?;
    let report = PipelineReport {
        modalities: vec![outcome.report.clone()],
        config_echo: config.clone(),
        seed: config.seed,
    };
    report.validate()?;
    Ok((report, vec![outcome]))
}

/// Cross-modal run: modality A is supervised by k-means targets from B and
/// vice versa. Both directions are reported; they are never merged.
pub fn run_multimodal(
    table_a: &EmbeddingTable,
    table_b: &EmbeddingTable,
    config: &PipelineConfig,
) -> Result<(PipelineReport, Vec<ModalityOutcome>)> {
    config.validate()?;
    let k = config.k;
    let kmeans_seed = seed::derive(config.seed, "kmeans", 0);
    let (norm_a, norm_b);
    let (view_a, view_b) = if config.normalize {
        norm_a = table_a.l2_normalized();
        norm_b = table_b.l2_normalized();
        (&norm_a, &norm_b)
    } else {
        (table_a, table_b)
    };
    let steps_a = cluster::cross_modal_targets(view_b, view_a, k, kmeans_seed)?;
    let steps_b = cluster::cross_modal_targets(view_a, view_b, k, kmeans_seed)?;

    let name_a = format!("{} <- {}", table_a.modality(), table_b.modality());
    let name_b = format!("{} <- {}", table_b.modality(), table_a.modality());
    let outcome_a =
        run_named_modality(table_a, &StepSource::Provided(steps_a), &name_a, config)?;
    let outcome_b =
        run_named_modality(table_b, &StepSource::Provided(steps_b), &name_b, config)?;

    let report = PipelineReport {
        modalities: vec![outcome_a.report.clone(), outcome_b.report.clone()],
        config_echo: config.clone(),
        seed: config.seed,
    };
    report.validate()?;
    Ok((report, vec![outcome_a, outcome_b]))
}

/// One row of the baseline comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub extension_size: f64,
}

/// Run the pipeline `repeats` times with derived seeds and aggregate the
/// accuracy of each completion arm; every arm spends the same budget and is
/// evaluated on the same frozen test split within a repeat.
pub fn compare_baselines(
    table: &EmbeddingTable,
    source: &StepSource,
    config: &PipelineConfig,
    repeats: usize,
) -> Result<Vec<ComparisonRow>> {
    if repeats == 0 {
        return Err(ScarError::InvalidConfig("repeats must be positive".into()));
    }
    let mut accs: [Vec<f64>; 4] = Default::default();
    let mut sizes: [Vec<f64>; 4] = Default::default();
    for r in 0..repeats {
        let mut cfg = config.clone();
        cfg.seed = seed::derive(config.seed, "repeat", r as u64);
        let outcome = run_single_modality(table, source, &cfg)?;
        let a = &outcome.report.accuracies;
        for (slot, (acc, size)) in [
            (a.primary, 0),
            (a.extended, outcome.extension_sizes.scar),
            (a.random, outcome.extension_sizes.random),
            (a.class_average, outcome.extension_sizes.class_average),
        ]
        .iter()
        .enumerate()
        {
            accs[slot].push(*acc);
            sizes[slot].push(*size as f64);
        }
    }
    let stats = |v: &[f64]| -> (f64, f64) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        (mean, std)
    };
    let methods = ["primary", "scar", "random", "class_average"];
    Ok(methods
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (mean_acc, std_acc) = stats(&accs[i]);
            let (mean_size, _) = stats(&sizes[i]);
            ComparisonRow {
                method: name.to_string(),
                mean_acc,
                std_acc,
                extension_size: mean_size,
            }
        })
        .collect())
}

/// Render comparison rows as CSV.
pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("method,mean_acc,std_acc,extension_size\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.method, row.mean_acc, row.std_acc, row.extension_size
        ));
    }
    out
}
