//! Single-layer linear probe: k-way softmax classifier trained with Adam.
//!
//! One probe realizes all k step functions at once: step `j` predicts
//! positive for a sample exactly when `j` is the argmax logit. Training is
//! plain mini-batch Adam on the softmax cross-entropy objective with early
//! stopping on validation accuracy; parameters start at zero, so the run is
//! a pure function of `(data, config)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarError};
use crate::seed;
use crate::store::EmbeddingTable;

/// Adam hyperparameters fixed by the training protocol.
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 500,
            patience: 5,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.patience == 0
            || self.max_epochs == 0
        {
            return Err(ScarError::InvalidConfig(
                "train config fields must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// k x d linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    weight: Vec<f64>,
    bias: Vec<f64>,
    k: usize,
    d: usize,
}

impl LinearProbe {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weight: vec![0.0; k * d],
            bias: vec![0.0; k],
            k,
            d,
        }
    }

    /// Build from explicit parameters (row-major k x d weight).
    pub fn from_parameters(weight: Vec<f64>, bias: Vec<f64>, k: usize, d: usize) -> Result<Self> {
        if weight.len() != k * d || bias.len() != k {
            return Err(ScarError::LengthMismatch(format!(
                "weight {} / bias {} for k={k}, d={d}",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(ScarError::NonFiniteValue { row: 0 });
        }
        Ok(Self { weight, bias, k, d })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `weight . x + bias` for one sample.
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (j, row) in self.weight.chunks_exact(self.d).enumerate() {
            out[j] += row
                .iter()
                .zip(x.iter())
                .map(|(&w, &v)| w * f64::from(v))
                .sum::<f64>();
        }
        out
    }
}

/// Evaluation of a probe over a table.
#[derive(Debug, Clone)]
pub struct ProbeEval {
    /// Ids of the evaluated samples, in table order.
    pub ids: Vec<u64>,
    /// True labels of the evaluated samples.
    pub labels: Vec<u32>,
    /// Fraction of samples whose argmax logit equals their label.
    pub accuracy: f64,
    /// Row-major `n x k`: did step `j`'s prediction match its target on
    /// sample `i`?
    per_step_correct: Vec<bool>,
    /// Row-major `n x k` logit matrix.
    logits: Vec<f64>,
    n: usize,
    k: usize,
}

impl ProbeEval {
    /// Assemble an evaluation from raw per-step correctness rows; test-only.
    #[cfg(test)]
    pub(crate) fn from_rows(rows: &[Vec<bool>]) -> Self {
        let k = rows[0].len();
        ProbeEval {
            ids: (0..rows.len() as u64).collect(),
            labels: vec![0; rows.len()],
            accuracy: 0.0,
            per_step_correct: rows.iter().flatten().copied().collect(),
            logits: vec![0.0; rows.len() * k],
            n: rows.len(),
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn step_correct(&self, i: usize, j: usize) -> bool {
        self.per_step_correct[i * self.k + j]
    }

    pub fn logit(&self, i: usize, j: usize) -> f64 {
        self.logits[i * self.k + j]
    }
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = j;
        }
    }
    best
}

fn require_labels(table: &EmbeddingTable) -> Result<(&[u32], usize)> {
    match (table.labels(), table.num_classes()) {
        (Some(l), Some(k)) => Ok((l, k)),
        _ => Err(ScarError::MissingLabels),
    }
}

/// Mean softmax cross-entropy and its gradient over a batch.
///
/// `xs` is row-major `b x d` in f64; returns `(loss, grad_w, grad_b)`.
fn loss_and_grad(
    weight: &[f64],
    bias: &[f64],
    k: usize,
    d: usize,
    xs: &[f64],
    ys: &[u32],
) -> (f64, Vec<f64>, Vec<f64>) {
    let b = ys.len();
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    let mut logits = vec![0.0f64; k];
    for (x, &y) in xs.chunks_exact(d).zip(ys.iter()) {
        for j in 0..k {
            logits[j] = bias[j]
                + weight[j * d..(j + 1) * d]
                    .iter()
                    .zip(x.iter())
                    .map(|(&w, &v)| w * v)
                    .sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        loss -= logits[y as usize] - max - denom.ln();
        for j in 0..k {
            let p = (logits[j] - max).exp() / denom;
            let coeff = p - if j == y as usize { 1.0 } else { 0.0 };
            grad_b[j] += coeff;
            for (g, &v) in grad_w[j * d..(j + 1) * d].iter_mut().zip(x.iter()) {
                *g += coeff * v;
            }
        }
    }
    let scale = 1.0 / b as f64;
    loss *= scale;
    grad_w.iter_mut().for_each(|g| *g *= scale);
    grad_b.iter_mut().for_each(|g| *g *= scale);
    (loss, grad_w, grad_b)
}

/// Mean softmax cross-entropy of a probe on a batch.
pub fn batch_loss(probe: &LinearProbe, xs: &[f64], ys: &[u32]) -> f64 {
    loss_and_grad(&probe.weight, &probe.bias, probe.k, probe.d, xs, ys).0
}

/// Train a probe with Adam and early stopping on validation accuracy.
///
/// Returns the parameters with the best validation accuracy seen; stops once
/// that accuracy has not improved for `patience` epochs or at `max_epochs`.
pub fn train(
    train_table: &EmbeddingTable,
    val_table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<LinearProbe> {
    config.validate()?;
    let (labels, k) = require_labels(train_table)?;
    if k < 2 {
        return Err(ScarError::InvalidConfig("probe needs k >= 2".into()));
    }
    if val_table.is_empty() {
        return Err(ScarError::InvalidConfig("empty validation table".into()));
    }
    if val_table.dim() != train_table.dim() {
        return Err(ScarError::DimensionMismatch {
            row: 0,
            expected: train_table.dim(),
            got: val_table.dim(),
        });
    }
    let mut present = vec![false; k];
    for &c in labels {
        present[c as usize] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(ScarError::DegenerateClass(missing as u32));
    }

    let d = train_table.dim();
    let n = train_table.len();
    let mut probe = LinearProbe::zeros(k, d);
    let mut m_w = vec![0.0f64; k * d];
    let mut v_w = vec![0.0f64; k * d];
    let mut m_b = vec![0.0f64; k];
    let mut v_b = vec![0.0f64; k];
    let mut step = 0u32;

    let mut best = probe.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale_epochs = 0usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size * d);
    let mut batch_y = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut seed::rng(config.seed, "probe_epoch", epoch as u64));
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend(train_table.row(i).iter().map(|&v| f64::from(v)));
                batch_y.push(labels[i]);
            }
            let (loss, grad_w, grad_b) =
                loss_and_grad(&probe.weight, &probe.bias, k, d, &batch_x, &batch_y);
            debug_assert!(loss.is_finite(), "training loss diverged");
            step += 1;
            let lr_t = config.learning_rate * (1.0 - BETA2.powi(step as i32)).sqrt()
                / (1.0 - BETA1.powi(step as i32));
            adam_update(&mut probe.weight, &mut m_w, &mut v_w, &grad_w, lr_t);
            adam_update(&mut probe.bias, &mut m_b, &mut v_b, &grad_b, lr_t);
        }
        let acc = evaluate(&probe, val_table)?.accuracy;
        if acc > best_acc {
            best_acc = acc;
            best = probe.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// Standard train/validation division for probe fitting: the table's
/// `test`-tagged rows when present and non-empty, otherwise a stratified
/// 80/20 carve-out.
pub fn train_val_split(
    table: &EmbeddingTable,
    seed_value: u64,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    if let Some((train_part, test_part)) = table.partition_by_split() {
        if !test_part.is_empty() && !train_part.is_empty() {
            return Ok((train_part, test_part));
        }
    }
    table.stratified_split(0.8, seed_value)
}

fn adam_update(params: &mut [f64], m: &mut [f64], v: &mut [f64], grad: &[f64], lr_t: f64) {
    for i in 0..params.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
        params[i] -= lr_t * m[i] / (v[i].sqrt() + ADAM_EPS);
    }
}

/// Evaluate a probe: logits, argmax accuracy, and per-step correctness.
///
/// Step `j` predicts positive exactly when `j` is the argmax logit; the
/// target is positive exactly when the label equals `j`.
pub fn evaluate(probe: &LinearProbe, table: &EmbeddingTable) -> Result<ProbeEval> {
    if table.dim() != probe.d {
        return Err(ScarError::DimensionMismatch {
            row: 0,
            expected: probe.d,
            got: table.dim(),
        });
    }
    let (labels, k) = require_labels(table)?;
    if k != probe.k {
        return Err(ScarError::InvalidConfig(format!(
            "table declares {k} classes, probe has {}",
            probe.k
        )));
    }
    let n = table.len();
    let mut logits = Vec::with_capacity(n * k);
    let mut per_step_correct = Vec::with_capacity(n * k);
    let mut correct = 0usize;
    for i in 0..n {
        let row_logits = probe.logits(table.row(i));
        let pred = argmax(&row_logits);
        let label = labels[i] as usize;
        if pred == label {
            correct += 1;
        }
        for (j, &l) in row_logits.iter().enumerate() {
            logits.push(l);
            per_step_correct.push((pred == j) == (label == j));
        }
    }
    Ok(ProbeEval {
        ids: table.ids().to_vec(),
        labels: labels.to_vec(),
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        per_step_correct,
        logits,
        n,
        k,
    })
}

/// Compare the analytic softmax cross-entropy gradient against central
/// finite differences with `h = 1e-4`; returns the maximum relative error
/// over all parameters.
pub fn numeric_gradient_check(probe: &LinearProbe, xs: &[f64], ys: &[u32]) -> f64 {
    const H: f64 = 1e-4;
    let k = probe.k;
    let d = probe.d;
    let (_, grad_w, grad_b) = loss_and_grad(&probe.weight, &probe.bias, k, d, xs, ys);

    let mut weight = probe.weight.clone();
    let mut bias = probe.bias.clone();
    let mut max_rel = 0.0f64;
    let mut check = |analytic: f64, plus: f64, minus: f64| {
        let numeric = (plus - minus) / (2.0 * H);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
    };
    for i in 0..weight.len() {
        let orig = weight[i];
        weight[i] = orig + H;
        let plus = loss_and_grad(&weight, &bias, k, d, xs, ys).0;
        weight[i] = orig - H;
        let minus = loss_and_grad(&weight, &bias, k, d, xs, ys).0;
        weight[i] = orig;
        check(grad_w[i], plus, minus);
    }
    for j in 0..bias.len() {
        let orig = bias[j];
        bias[j] = orig + H;
        let plus = loss_and_grad(&weight, &bias, k, d, xs, ys).0;
        bias[j] = orig - H;
        let minus = loss_and_grad(&weight, &bias, k, d, xs, ys).0;
        bias[j] = orig;
        check(grad_b[j], plus, minus);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EmbeddingTable;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Two Gaussians in d dimensions whose means are `margin` apart.
    pub(crate) fn gaussian_pair(
        n: usize,
        d: usize,
        margin: f32,
        seed: u64,
    ) -> (EmbeddingTable, EmbeddingTable) {
        let mut rng = seed::rng(seed, "gauss", 0);
        let mut make = |count: usize, offset: u64| {
            let mut ids = Vec::new();
            let mut vectors: Vec<f32> = Vec::new();
            let mut labels = Vec::new();
            for i in 0..count {
                let class = (i % 2) as u32;
                ids.push(offset + i as u64);
                labels.push(class);
                for u in 0..d {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let mean = if u == 0 && class == 1 { margin } else { 0.0 };
                    vectors.push(mean + noise as f32);
                }
            }
            EmbeddingTable::new(ids, vectors, d, Some((labels, 2)), None, "gauss").unwrap()
        };
        (make(n, 0), make(n / 4, 1_000_000))
    }

    #[test]
    fn separable_gaussians_reach_high_accuracy() {
        // Margin-4 class means with consistent labels; 3 seeds must all
        // clear 0.99 on 1000 training samples.
        use crate::synth::{self, ClassGeometry, OraclePreset};
        for seed in [1, 2, 3] {
            let preset = OraclePreset::identity_maps(
                8,
                2,
                1250,
                ClassGeometry::SeparableGaussians { margin: 4.0 },
                0.0,
                seed,
            )
            .unwrap();
            let data = synth::generate(&preset).unwrap();
            let (train_t, val_t) = data.table_a.partition_by_split().unwrap();
            assert_eq!(train_t.len(), 1000);
            let config = TrainConfig {
                batch_size: 100,
                ..TrainConfig::default()
            }
            .with_seed(seed);
            let probe = train(&train_t, &val_t, &config).unwrap();
            let acc = evaluate(&probe, &val_t).unwrap().accuracy;
            assert!(acc >= 0.99, "seed {seed}: accuracy {acc}");
        }
    }

    #[test]
    fn defaults_match_training_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.batch_size, 500);
        assert_eq!(c.patience, 5);
        assert_eq!(c.max_epochs, 100);
    }

    #[test]
    fn degenerate_class_rejected() {
        let table = EmbeddingTable::new(
            vec![0, 1],
            vec![0.0, 1.0],
            1,
            Some((vec![0, 0], 2)),
            None,
            "m",
        );
        // Construction itself refuses an unoccupied class; build via
        // take_rows to reach the training check.
        assert!(table.is_err());
        let full = EmbeddingTable::new(
            vec![0, 1, 2],
            vec![0.0, 1.0, 2.0],
            1,
            Some((vec![0, 0, 1], 2)),
            None,
            "m",
        )
        .unwrap();
        let missing_one = full.take_rows(&[0, 1]);
        let err = train(&missing_one, &full, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ScarError::DegenerateClass(1)));
    }

    #[test]
    fn evaluate_hand_examples() {
        // Weight rows e_1 and e_2, zero bias.
        let probe =
            LinearProbe::from_parameters(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2).unwrap();

        let t1 = EmbeddingTable::new(
            vec![0, 1],
            vec![5.0, 0.0, 0.0, 5.0],
            2,
            Some((vec![0, 1], 2)),
            None,
            "m",
        )
        .unwrap();
        let eval = evaluate(&probe, &t1).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert!(eval.step_correct(0, 0) && eval.step_correct(0, 1));

        // x = (0, 5) with label 0: predicted 1, so both steps are wrong.
        let t2 = EmbeddingTable::new(
            vec![0, 1],
            vec![0.0, 5.0, 5.0, 0.0],
            2,
            Some((vec![0, 1], 2)),
            None,
            "m",
        )
        .unwrap();
        let eval = evaluate(&probe, &t2).unwrap();
        assert_eq!(eval.accuracy, 0.0);
        assert!(!eval.step_correct(0, 0) && !eval.step_correct(0, 1));
        assert!(!eval.step_correct(1, 0) && !eval.step_correct(1, 1));
    }

    #[test]
    fn gradient_check_small_batch() {
        let mut rng = seed::rng(5, "gradcheck", 0);
        let d = 3;
        let k = 2;
        let xs: Vec<f64> = (0..5 * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ys: Vec<u32> = (0..5).map(|i| (i % k) as u32).collect();
        let weight: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe = LinearProbe::from_parameters(weight, bias, k, d).unwrap();
        let err = numeric_gradient_check(&probe, &xs, &ys);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_probe_loss_is_ln_k() {
        let k = 4;
        let d = 2;
        let probe = LinearProbe::zeros(k, d);
        let xs: Vec<f64> = vec![1.0, -1.0, 0.5, 2.0, 0.0, 0.0, 3.0, 1.0];
        let ys = vec![0, 1, 2, 3];
        let loss = batch_loss(&probe, &xs, &ys);
        assert!((loss - (k as f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn bias_gradient_sums_to_zero() {
        let probe =
            LinearProbe::from_parameters(vec![0.3, -0.2, 0.1, 0.7], vec![0.2, -0.1], 2, 2).unwrap();
        let xs = vec![1.5, -0.5];
        let ys = vec![1];
        let (_, _, grad_b) = loss_and_grad(probe.weight(), probe.bias(), 2, 2, &xs, &ys);
        assert!(grad_b.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic() {
        let (train_t, val_t) = gaussian_pair(400, 4, 2.0, 9);
        let config = TrainConfig {
            batch_size: 64,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let a = train(&train_t, &val_t, &config).unwrap();
        let b = train(&train_t, &val_t, &config).unwrap();
        assert_eq!(a.weight(), b.weight());
        assert_eq!(a.bias(), b.bias());
    }

    #[test]
    fn returned_probe_attains_best_val_accuracy() {
        let (train_t, val_t) = gaussian_pair(600, 4, 1.0, 13);
        let config = TrainConfig {
            batch_size: 100,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let probe = train(&train_t, &val_t, &config).unwrap();
        let returned_acc = evaluate(&probe, &val_t).unwrap().accuracy;

        // Replay training manually and track the maximum accuracy seen.
        let mut replay = LinearProbe::zeros(2, 4);
        let (labels, k) = (train_t.labels().unwrap().to_vec(), 2);
        let d = 4;
        let mut m_w = vec![0.0; k * d];
        let mut v_w = vec![0.0; k * d];
        let mut m_b = vec![0.0; k];
        let mut v_b = vec![0.0; k];
        let mut step = 0u32;
        let mut best_seen = f64::NEG_INFINITY;
        let mut stale = 0;
        let mut order: Vec<usize> = (0..train_t.len()).collect();
        for epoch in 0..config.max_epochs {
            order.shuffle(&mut seed::rng(config.seed, "probe_epoch", epoch as u64));
            for chunk in order.chunks(config.batch_size) {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for &i in chunk {
                    xs.extend(train_t.row(i).iter().map(|&v| f64::from(v)));
                    ys.push(labels[i]);
                }
                let (_, gw, gb) = loss_and_grad(&replay.weight, &replay.bias, k, d, &xs, &ys);
                step += 1;
                let lr_t = config.learning_rate * (1.0 - BETA2.powi(step as i32)).sqrt()
                    / (1.0 - BETA1.powi(step as i32));
                adam_update(&mut replay.weight, &mut m_w, &mut v_w, &gw, lr_t);
                adam_update(&mut replay.bias, &mut m_b, &mut v_b, &gb, lr_t);
            }
            let acc = evaluate(&replay, &val_t).unwrap().accuracy;
            if acc > best_seen {
                best_seen = acc;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
        assert!((returned_acc - best_seen).abs() < 1e-12);
    }
}
