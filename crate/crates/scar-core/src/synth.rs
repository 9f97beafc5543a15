//! Synthetic oracles with known ground truth.
//!
//! Datasets are generated from the model the estimators assume: a latent
//! vector `K` per sample, class labels given exactly by the argmax of a
//! known linear score `W K + B`, and two observed modalities that are
//! full-rank linear images of `K` plus isotropic noise. Because every
//! quantity is known, these datasets serve as oracles for the probe, the
//! measures, and the Monte-Carlo checks of the failure-probability bounds.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarError};
use crate::probe::{self, TrainConfig};
use crate::seed;
use crate::steps::StepFunctionSet;
use crate::store::{EmbeddingTable, SplitTag};

/// Latent class layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassGeometry {
    /// Class means `margin` apart (in units of the within-class sigma).
    SeparableGaussians { margin: f64 },
    /// Means drawn together as `overlap` rises from 0 (separation 4) to 1
    /// (coincident means).
    OverlappingGaussians { overlap: f64 },
    /// Separable means, but one class holds only `fraction` of the
    /// training mass.
    StarvedClass { class: usize, fraction: f64 },
}

impl ClassGeometry {
    fn separation(&self) -> f64 {
        match self {
            ClassGeometry::SeparableGaussians { margin } => *margin,
            ClassGeometry::OverlappingGaussians { overlap } => 4.0 * (1.0 - overlap),
            ClassGeometry::StarvedClass { .. } => 4.0,
        }
    }

    fn train_fractions(&self, k: usize) -> Vec<f64> {
        match self {
            ClassGeometry::StarvedClass { class, fraction } => (0..k)
                .map(|c| {
                    if c == *class {
                        *fraction
                    } else {
                        (1.0 - fraction) / (k - 1) as f64
                    }
                })
                .collect(),
            _ => vec![1.0 / k as f64; k],
        }
    }
}

/// Full description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePreset {
    pub latent_dim: usize,
    pub k: usize,
    pub n: usize,
    pub geometry: ClassGeometry,
    /// Row-major `d x d` modality maps.
    pub map_a: Vec<f64>,
    pub map_b: Vec<f64>,
    /// Additive isotropic noise applied after the modality maps.
    pub noise_scale: f64,
    /// Fraction of samples tagged `test`; the test block is class-balanced.
    pub test_fraction: f64,
    pub seed: u64,
}

impl OraclePreset {
    /// Preset with random well-conditioned modality maps derived from the
    /// seed (orthogonal basis times per-axis scales in [0.8, 1.25]).
    pub fn new(
        latent_dim: usize,
        k: usize,
        n: usize,
        geometry: ClassGeometry,
        noise_scale: f64,
        seed_value: u64,
    ) -> Result<Self> {
        let map_a = random_map(latent_dim, seed::derive(seed_value, "map", 0));
        let map_b = random_map(latent_dim, seed::derive(seed_value, "map", 1));
        Self::with_maps(latent_dim, k, n, geometry, map_a, map_b, noise_scale, seed_value)
    }

    /// Preset with identity modality maps (both tables equal `K` at noise 0).
    pub fn identity_maps(
        latent_dim: usize,
        k: usize,
        n: usize,
        geometry: ClassGeometry,
        noise_scale: f64,
        seed_value: u64,
    ) -> Result<Self> {
        let mut eye = vec![0.0; latent_dim * latent_dim];
        for i in 0..latent_dim {
            eye[i * latent_dim + i] = 1.0;
        }
        Self::with_maps(latent_dim, k, n, geometry, eye.clone(), eye, noise_scale, seed_value)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_maps(
        latent_dim: usize,
        k: usize,
        n: usize,
        geometry: ClassGeometry,
        map_a: Vec<f64>,
        map_b: Vec<f64>,
        noise_scale: f64,
        seed_value: u64,
    ) -> Result<Self> {
        let preset = Self {
            latent_dim,
            k,
            n,
            geometry,
            map_a,
            map_b,
            noise_scale,
            test_fraction: 0.2,
            seed: seed_value,
        };
        preset.validate()?;
        Ok(preset)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim;
        if self.k < 1 || d < self.k {
            return Err(ScarError::InvalidConfig(format!(
                "need latent_dim >= k >= 1, got d={d}, k={}",
                self.k
            )));
        }
        if self.map_a.len() != d * d || self.map_b.len() != d * d {
            return Err(ScarError::InvalidConfig("modality maps must be d x d".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(ScarError::InvalidConfig("noise scale must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(ScarError::InvalidConfig("test fraction outside [0, 1)".into()));
        }
        match &self.geometry {
            ClassGeometry::SeparableGaussians { margin } if *margin <= 0.0 => {
                return Err(ScarError::InvalidConfig("margin must be positive".into()));
            }
            ClassGeometry::OverlappingGaussians { overlap } if !(0.0..=1.0).contains(overlap) => {
                return Err(ScarError::InvalidConfig("overlap outside [0, 1]".into()));
            }
            ClassGeometry::StarvedClass { class, fraction } => {
                if *class >= self.k {
                    return Err(ScarError::InvalidConfig("starved class out of range".into()));
                }
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(ScarError::InvalidConfig("starved fraction outside (0, 1)".into()));
                }
            }
            _ => {}
        }
        for (name, map) in [("a", &self.map_a), ("b", &self.map_b)] {
            let cond = condition_number(map, d)?;
            if cond > 1e6 {
                return Err(ScarError::InvalidConfig(format!(
                    "modality map {name} condition number {cond:.3e} exceeds 1e6"
                )));
            }
        }
        Ok(())
    }
}

/// Known generating parameters, written as the sidecar of `scar synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Row-major `k x d` score weights.
    pub weight: Vec<f64>,
    /// Score biases (all zero under the axis construction).
    pub bias: Vec<f64>,
    pub map_a: Vec<f64>,
    pub map_b: Vec<f64>,
    pub geometry: ClassGeometry,
    pub noise_scale: f64,
    pub latent_dim: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
}

/// A generated dataset pair with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub table_a: EmbeddingTable,
    pub table_b: EmbeddingTable,
    pub labels: Vec<u32>,
    pub truth: GroundTruth,
}

/// Integer class counts matching `fractions` with cascade rounding, so the
/// counts sum to `total` exactly.
fn exact_counts(fractions: &[f64], total: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut assigned = 0usize;
    for &f in fractions {
        cum += f;
        let upto = (cum * total as f64).round_ties_even() as usize;
        counts.push(upto.min(total) - assigned);
        assigned = upto.min(total);
    }
    counts
}

/// Generate the paired modality tables with argmax-consistent labels.
pub fn generate(preset: &OraclePreset) -> Result<SynthDataset> {
    preset.validate()?;
    let d = preset.latent_dim;
    let k = preset.k;
    let sep = preset.geometry.separation();

    let test_total = (preset.test_fraction * preset.n as f64).round_ties_even() as usize;
    let train_total = preset.n - test_total;
    let train_counts = exact_counts(&preset.geometry.train_fractions(k), train_total);
    let test_counts = exact_counts(&vec![1.0 / k as f64; k], test_total);

    let mut rng = seed::rng(preset.seed, "latent", 0);
    let mut labels = Vec::with_capacity(preset.n);
    let mut tags = Vec::with_capacity(preset.n);
    let mut vec_a = Vec::with_capacity(preset.n * d);
    let mut vec_b = Vec::with_capacity(preset.n * d);

    let emit = |class: usize, tag: SplitTag, rng: &mut rand_chacha::ChaCha8Rng,
                    labels: &mut Vec<u32>, tags: &mut Vec<SplitTag>,
                    vec_a: &mut Vec<f32>, vec_b: &mut Vec<f32>| {
        let latent = sample_latent(d, k, class, sep, rng);
        labels.push(class as u32);
        tags.push(tag);
        push_modality(&preset.map_a, &latent, preset.noise_scale, rng, vec_a);
        push_modality(&preset.map_b, &latent, preset.noise_scale, rng, vec_b);
    };

    for (class, &count) in train_counts.iter().enumerate() {
        for _ in 0..count {
            emit(class, SplitTag::Train, &mut rng, &mut labels, &mut tags, &mut vec_a, &mut vec_b);
        }
    }
    for (class, &count) in test_counts.iter().enumerate() {
        for _ in 0..count {
            emit(class, SplitTag::Test, &mut rng, &mut labels, &mut tags, &mut vec_a, &mut vec_b);
        }
    }

    let ids: Vec<u64> = (0..preset.n as u64).collect();
    let table_a = EmbeddingTable::new(
        ids.clone(),
        vec_a,
        d,
        Some((labels.clone(), k)),
        Some(tags.clone()),
        "synthetic-a",
    )?;
    let table_b = EmbeddingTable::new(
        ids,
        vec_b,
        d,
        Some((labels.clone(), k)),
        Some(tags),
        "synthetic-b",
    )?;

    // Score weights: row j reads out latent axis j, zero bias.
    let mut weight = vec![0.0; k * d];
    for j in 0..k {
        weight[j * d + j] = 1.0;
    }
    Ok(SynthDataset {
        table_a,
        table_b,
        labels,
        truth: GroundTruth {
            weight,
            bias: vec![0.0; k],
            map_a: preset.map_a.clone(),
            map_b: preset.map_b.clone(),
            geometry: preset.geometry.clone(),
            noise_scale: preset.noise_scale,
            latent_dim: d,
            k,
            n: preset.n,
            seed: preset.seed,
        },
    })
}

/// Draw a latent vector for `class` whose argmax score equals the class.
///
/// Rejection keeps the labels exactly consistent with the generating linear
/// rule; with separation 4 almost every draw is accepted.
fn sample_latent(
    d: usize,
    k: usize,
    class: usize,
    separation: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f64> {
    for _ in 0..100_000 {
        let mut latent: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        latent[class] += separation;
        let mut best = 0;
        for j in 1..k {
            if latent[j] > latent[best] {
                best = j;
            }
        }
        if best == class {
            return latent;
        }
    }
    unreachable!("rejection sampling failed to produce a consistent label");
}

fn push_modality(
    map: &[f64],
    latent: &[f64],
    noise_scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
    out: &mut Vec<f32>,
) {
    let d = latent.len();
    for row in 0..d {
        let mut v = 0.0;
        for (u, &x) in latent.iter().enumerate() {
            v += map[row * d + u] * x;
        }
        if noise_scale > 0.0 {
            let eta: f64 = StandardNormal.sample(rng);
            v += noise_scale * eta;
        }
        out.push(v as f32);
    }
}

/// Random orthogonal basis times per-axis scales in [0.8, 1.25]; condition
/// number at most 1.5625.
fn random_map(d: usize, seed_value: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_value, "random_map", 0);
    // Gram-Schmidt on a Gaussian matrix.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for prev in &q {
            let dot: f64 = v.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev.iter()) {
                *x -= dot * p;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
    }
    let scales: Vec<f64> = (0..d).map(|_| rng.gen_range(0.8..1.25)).collect();
    let mut map = vec![0.0; d * d];
    for row in 0..d {
        for col in 0..d {
            map[row * d + col] = q[row][col] * scales[col];
        }
    }
    map
}

/// Apply the inverse of a `d x d` map to every row of a table (used to
/// verify the lossless-recovery property of the modality maps).
pub fn apply_inverse_map(map: &[f64], table: &EmbeddingTable) -> Result<Vec<f64>> {
    let d = table.dim();
    let inv = invert(map, d)?;
    let mut out = Vec::with_capacity(table.len() * d);
    for i in 0..table.len() {
        let row = table.row(i);
        for r in 0..d {
            let mut v = 0.0;
            for u in 0..d {
                v += inv[r * d + u] * f64::from(row[u]);
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Gauss-Jordan inverse.
fn invert(map: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut a = map.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&r1, &r2| a[r1 * d + col].abs().total_cmp(&a[r2 * d + col].abs()))
            .unwrap();
        if a[pivot * d + col].abs() < 1e-12 {
            return Err(ScarError::InvalidConfig("modality map is singular".into()));
        }
        for u in 0..d {
            a.swap(col * d + u, pivot * d + u);
            inv.swap(col * d + u, pivot * d + u);
        }
        let diag = a[col * d + col];
        for u in 0..d {
            a[col * d + u] /= diag;
            inv[col * d + u] /= diag;
        }
        for row in 0..d {
            if row == col {
                continue;
            }
            let factor = a[row * d + col];
            if factor != 0.0 {
                for u in 0..d {
                    a[row * d + u] -= factor * a[col * d + u];
                    inv[row * d + u] -= factor * inv[col * d + u];
                }
            }
        }
    }
    Ok(inv)
}

/// Spectral condition number estimate by power iteration on the map and its
/// inverse.
fn condition_number(map: &[f64], d: usize) -> Result<f64> {
    let inv = invert(map, d)?;
    Ok(spectral_norm(map, d) * spectral_norm(&inv, d))
}

fn spectral_norm(map: &[f64], d: usize) -> f64 {
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut sigma = 0.0;
    for _ in 0..50 {
        // w = A^T A v
        let mut av = vec![0.0; d];
        for r in 0..d {
            for u in 0..d {
                av[r] += map[r * d + u] * v[u];
            }
        }
        let mut w = vec![0.0; d];
        for r in 0..d {
            for u in 0..d {
                w[u] += map[r * d + u] * av[r];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|x| x / norm).collect();
        sigma = norm.sqrt();
    }
    sigma
}

/// Empirical per-step and joint failure frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRates {
    /// `Pr(err_D(H_j) >= epsilon)` per step.
    pub per_step: Vec<f64>,
    /// Frequency of all steps failing together.
    pub joint: f64,
    /// Frequency of at least one step failing.
    pub union: f64,
    pub trials: usize,
    /// ERM sample count per trial (for the matching `t = exp(-2 n eps^2)`).
    pub train_n: usize,
}

/// Monte-Carlo failure frequencies: per trial, resample a dataset, train a
/// probe, and measure each step's error on a fresh holdout of `10 n`.
pub fn empirical_failure_rate(
    preset: &OraclePreset,
    epsilon: f64,
    trials: usize,
    config: &TrainConfig,
) -> Result<FailureRates> {
    if trials < 100 {
        return Err(ScarError::InvalidConfig("need at least 100 trials".into()));
    }
    let k = preset.k;
    let mut fail_counts = vec![0usize; k];
    let mut joint_count = 0usize;
    let mut union_count = 0usize;
    let mut train_n = 0usize;

    for trial in 0..trials {
        let mut trial_preset = preset.clone();
        trial_preset.seed = seed::derive(preset.seed, "trial", trial as u64);
        trial_preset.test_fraction = 0.0;
        let data = generate(&trial_preset)?;

        let mut holdout_preset = trial_preset.clone();
        holdout_preset.seed = seed::derive(preset.seed, "holdout", trial as u64);
        holdout_preset.n = 10 * preset.n;
        let holdout = generate(&holdout_preset)?;

        let (train_t, val_t) = probe::train_val_split(
            &data.table_a,
            seed::derive(preset.seed, "trial_val", trial as u64),
        )?;
        train_n = train_t.len();
        let probe_config = config
            .clone()
            .with_seed(seed::derive(preset.seed, "trial_probe", trial as u64));
        let model = probe::train(&train_t, &val_t, &probe_config)?;
        let eval = probe::evaluate(&model, &holdout.table_a)?;

        let mut any = false;
        let mut all = true;
        for (j, count) in fail_counts.iter_mut().enumerate() {
            let err = 1.0 - crate::metrics::authenticity(&eval, j);
            if err >= epsilon {
                *count += 1;
                any = true;
            } else {
                all = false;
            }
        }
        if any {
            union_count += 1;
        }
        if all {
            joint_count += 1;
        }
    }

    Ok(FailureRates {
        per_step: fail_counts
            .iter()
            .map(|&c| c as f64 / trials as f64)
            .collect(),
        joint: joint_count as f64 / trials as f64,
        union: union_count as f64 / trials as f64,
        trials,
        train_n,
    })
}

/// One-vs-rest step set from the generated labels.
pub fn step_set(data: &SynthDataset) -> StepFunctionSet {
    StepFunctionSet::from_labels(data.labels.clone(), data.truth.k)
        .expect("generated labels are always in range")
}
