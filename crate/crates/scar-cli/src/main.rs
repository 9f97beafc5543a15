//! `scar` — dataset characterization, foundation-size estimation, and
//! completion planning over SCAR embedding containers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scar_core::completion::CompletionPlan;
use scar_core::error::ScarError;
use scar_core::pipeline::{self, PipelineConfig, StepSource};
use scar_core::report::PipelineReport;
use scar_core::synth::{self, ClassGeometry, OraclePreset};
use scar_core::{sec, seed};

#[derive(Parser)]
#[command(name = "scar", version, about = "SCAR dataset characterization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate SCAR measures, foundation sizes, and a completion plan.
    Estimate(EstimateArgs),
    /// Materialize a completion plan from a reserve pool.
    Complete(CompleteArgs),
    /// Compare completion strategies over repeated runs.
    Compare(CompareArgs),
    /// Generate a synthetic embedding dataset with known ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Input SEC file.
    #[arg(long)]
    embeddings: PathBuf,
    /// Paired SEC file for cross-modal pseudo-supervision.
    #[arg(long)]
    paired: Option<PathBuf>,
    /// Number of step functions (classes or clusters).
    #[arg(long)]
    k: usize,
    /// Primary share of the train part.
    #[arg(long, default_value_t = 0.6)]
    split: f64,
    /// Comma-separated ascending sampling ratios.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.4,0.6,0.8,1.0"
    )]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the measured ladder points.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Per-step confidence target.
    #[arg(long, default_value_t = 0.01)]
    delta_star: f64,
    /// Per-step error target.
    #[arg(long, default_value_t = 0.01)]
    epsilon_star: f64,
    /// Bonferroni truncation order.
    #[arg(long, default_value_t = 3)]
    k_prime: usize,
    /// Set-level confidence target.
    #[arg(long, default_value_t = 0.01)]
    delta_e: f64,
    /// Set-level error target; defaults to 0.01 ln k.
    #[arg(long)]
    epsilon_e: Option<f64>,
    /// Use 1 - I_c instead of I_c as the bound multiplier.
    #[arg(long)]
    coverage_as_delta: bool,
    /// L2-normalize embedding rows before any other phase.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct CompleteArgs {
    /// Report produced by `scar estimate`.
    #[arg(long)]
    report: PathBuf,
    /// Reserve pool SEC file; rows whose ids already sit in the primary or
    /// test split are ignored.
    #[arg(long)]
    reserve: PathBuf,
    /// Extended dataset output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    k: usize,
    /// Number of seeded repetitions.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comparison table output path (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Preset name: default, separable, overlapping, or starved.
    #[arg(long)]
    preset: String,
    /// Output path for modality A; modality B and the ground-truth sidecar
    /// derive their names from it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => estimate(args),
        Command::Complete(args) => complete(args),
        Command::Compare(args) => compare(args),
        Command::Synth(args) => synth_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn step_source(table: &scar_core::EmbeddingTable) -> StepSource {
    if table.labels().is_some() {
        StepSource::TableLabels
    } else {
        StepSource::Cluster
    }
}

fn estimate(args: EstimateArgs) -> Result<(), ScarError> {
    let table = sec::load_table(&args.embeddings)?;
    let mut config = PipelineConfig::new(args.k);
    config.modality_paths = vec![args.embeddings.display().to_string()];
    config.split_ratio = args.split;
    config.sampling_ratios = args.ratios.clone();
    config.seed = args.seed;
    config.delta_star = args.delta_star;
    config.epsilon_star = args.epsilon_star;
    config.k_prime = args.k_prime;
    config.delta_e = args.delta_e;
    config.epsilon_e = args.epsilon_e;
    config.coverage_as_delta = args.coverage_as_delta;
    config.normalize = args.normalize;

    let (report, outcomes) = match &args.paired {
        Some(paired_path) => {
            let paired = sec::load_table(paired_path)?;
            config
                .modality_paths
                .push(paired_path.display().to_string());
            pipeline::run_multimodal(&table, &paired, &config)?
        }
        None => pipeline::run_pipeline(&table, &step_source(&table), &config)?,
    };

    std::fs::write(&args.out, report.to_json_string()?)?;
    if let Some(points_path) = &args.points {
        if outcomes.len() == 1 {
            std::fs::write(points_path, scar_core::metrics::points_to_csv(&outcomes[0].points))?;
        } else {
            for (i, outcome) in outcomes.iter().enumerate() {
                let path = suffixed(points_path, &format!("_{i}"));
                std::fs::write(path, scar_core::metrics::points_to_csv(&outcome.points))?;
            }
        }
    }
    Ok(())
}

fn complete(args: CompleteArgs) -> Result<(), ScarError> {
    let json = std::fs::read_to_string(&args.report)?;
    let report = PipelineReport::from_json_str(&json)?;
    if report.modalities.len() != 1 {
        return Err(ScarError::InvalidReport(
            "completion from a reserve pool needs a single-modality report; \
             cross-modal reports require paired pools"
                .into(),
        ));
    }
    let modality = &report.modalities[0];
    let config = &report.config_echo;
    let source_path = config.modality_paths.first().ok_or_else(|| {
        ScarError::InvalidReport("report echoes no embedding path".into())
    })?;
    let table = sec::load_table(source_path)?;
    let prepared = pipeline::prepare_modality(&table, &step_source(&table), config)?;

    // Drop pool rows already held by the primary or test splits, then label
    // the remainder under the same step rule as the estimate run.
    let pool_raw = sec::load_table(&args.reserve)?;
    let held: std::collections::HashSet<u64> = prepared
        .primary
        .ids()
        .iter()
        .chain(prepared.test.ids())
        .copied()
        .collect();
    let keep: Vec<usize> = (0..pool_raw.len())
        .filter(|&i| !held.contains(&pool_raw.ids()[i]))
        .collect();
    let pool = pipeline::label_pool(&prepared.labeler, &pool_raw.take_rows(&keep), prepared.k)?;

    let mut plan = CompletionPlan {
        total_shortfall: modality.fds_n_star.saturating_sub(modality.n_p),
        fill: modality.plan.fill.clone(),
        weights: modality.plan.weights.clone(),
        allocations: modality.plan.allocations.clone(),
        reserve_budget: modality.plan.reserve_budget,
        selected_ids: vec![Vec::new(); modality.plan.allocations.len()],
    };
    let extended = scar_core::completion::materialize(
        &mut plan,
        &prepared.primary,
        &pool,
        seed::derive(config.seed, "complete", 0),
    )?;
    sec::write_table(&extended, &args.out)?;
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), ScarError> {
    let table = sec::load_table(&args.embeddings)?;
    let mut config = PipelineConfig::new(args.k);
    config.modality_paths = vec![args.embeddings.display().to_string()];
    config.seed = args.seed;
    let rows = pipeline::compare_baselines(&table, &step_source(&table), &config, args.repeats)?;
    std::fs::write(&args.out, pipeline::comparison_to_csv(&rows))?;
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<(), ScarError> {
    let (n, d, k, geometry, noise) = match args.preset.as_str() {
        "default" => (
            20_000,
            64,
            5,
            ClassGeometry::SeparableGaussians { margin: 4.0 },
            0.25,
        ),
        "separable" => (
            4_000,
            16,
            3,
            ClassGeometry::SeparableGaussians { margin: 5.0 },
            0.1,
        ),
        "overlapping" => (
            4_000,
            16,
            3,
            ClassGeometry::OverlappingGaussians { overlap: 0.5 },
            0.25,
        ),
        "starved" => (
            4_500,
            64,
            5,
            ClassGeometry::StarvedClass {
                class: 0,
                fraction: 0.05,
            },
            2.0,
        ),
        other => {
            return Err(ScarError::InvalidConfig(format!(
                "unknown preset '{other}' (expected default, separable, overlapping, or starved)"
            )))
        }
    };
    let preset = OraclePreset::new(
        args.d.unwrap_or(d),
        args.k.unwrap_or(k),
        args.n.unwrap_or(n),
        geometry,
        args.noise.unwrap_or(noise),
        args.seed,
    )?;
    let data = synth::generate(&preset)?;
    sec::write_table(&data.table_a, &args.out)?;
    sec::write_table(&data.table_b, suffixed(&args.out, ".paired"))?;
    let truth_json = serde_json::to_string_pretty(&data.truth)
        .map_err(|e| ScarError::InvalidReport(e.to_string()))?;
    std::fs::write(with_extension(&args.out, "truth.json"), truth_json)?;
    Ok(())
}

/// `foo.sec` -> `foo<suffix>.sec`.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("sec");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
