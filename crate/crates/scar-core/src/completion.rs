//! Shortfall-weighted data completion plans.
//!
//! Given per-step requirements `n_j*` and holdings `n_j`, the shortfall
//! weights are `w_j = max(0, n_j* - n_j) / sum_j max(0, n_j* - n_j)`. The
//! total shortfall `max(0, n* - n)` is distributed by these weights, capped
//! by the bottleneck reserve budget `n_r = min_{w_j > 0} reserve_j / w_j`:
//!
//! ```text
//! allocation_j = floor(min(w_j * max(0, n* - n), w_j * n_r))
//! ```
//!
//! All allocation arithmetic is exact: the quantities are rationals over the
//! total fill, evaluated with 128-bit integer division, so plans are
//! scale-equivariant and never suffer floating-point floor glitches.

use rand::seq::SliceRandom;

use crate::error::{Result, ScarError};
use crate::seed;
use crate::store::EmbeddingTable;

/// A per-step completion plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionPlan {
    /// `max(0, n* - n)`.
    pub total_shortfall: u64,
    /// Per-step shortfall `max(0, n_j* - n_j)`.
    pub fill: Vec<u64>,
    /// Normalized shortfall weights; all zero when nothing is missing.
    pub weights: Vec<f64>,
    /// Samples to draw per step.
    pub allocations: Vec<u64>,
    /// Bottleneck reserve budget `n_r`; fractional in general, 0 when no
    /// step has positive weight.
    pub reserve_budget: f64,
    /// Reserve ids drawn per step; empty until materialized.
    pub selected_ids: Vec<Vec<u64>>,
}

impl CompletionPlan {
    pub fn total_allocated(&self) -> u64 {
        self.allocations.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.allocations.iter().all(|&a| a == 0)
    }
}

/// Build the shortfall-weighted plan.
pub fn plan(
    n: u64,
    n_star: u64,
    per_step_n: &[u64],
    per_step_n_star: &[u64],
    reserve_counts: &[u64],
) -> Result<CompletionPlan> {
    let k = per_step_n.len();
    if per_step_n_star.len() != k || reserve_counts.len() != k {
        return Err(ScarError::LengthMismatch(format!(
            "per-step lengths {} / {} / {}",
            k,
            per_step_n_star.len(),
            reserve_counts.len()
        )));
    }
    let fill: Vec<u64> = per_step_n
        .iter()
        .zip(per_step_n_star)
        .map(|(&have, &need)| need.saturating_sub(have))
        .collect();
    let total_fill: u64 = fill.iter().sum();
    let total_shortfall = n_star.saturating_sub(n);

    let weights: Vec<f64> = if total_fill == 0 {
        vec![0.0; k]
    } else {
        fill.iter().map(|&f| f as f64 / total_fill as f64).collect()
    };

    // Bottleneck step: the positive-weight step with the smallest
    // reserve_j / w_j = reserve_j * total_fill / fill_j, compared exactly by
    // cross-multiplication.
    let bottleneck = (0..k)
        .filter(|&j| fill[j] > 0)
        .min_by(|&a, &b| {
            let lhs = reserve_counts[a] as u128 * fill[b] as u128;
            let rhs = reserve_counts[b] as u128 * fill[a] as u128;
            lhs.cmp(&rhs)
        });

    let (allocations, reserve_budget) = match bottleneck {
        None => (vec![0; k], 0.0),
        Some(star) => {
            let budget =
                reserve_counts[star] as f64 * total_fill as f64 / fill[star] as f64;
            let allocations = fill
                .iter()
                .map(|&f| {
                    // floor(w_j * shortfall) and floor(w_j * n_r), exactly.
                    let by_shortfall =
                        f as u128 * total_shortfall as u128 / total_fill as u128;
                    let by_reserve =
                        f as u128 * reserve_counts[star] as u128 / fill[star] as u128;
                    by_shortfall.min(by_reserve) as u64
                })
                .collect();
            (allocations, budget)
        }
    };

    Ok(CompletionPlan {
        total_shortfall,
        fill,
        weights,
        allocations,
        reserve_budget,
        selected_ids: vec![Vec::new(); k],
    })
}

/// Draw the planned samples from the reserve pool and append them to the
/// primary table. Per step, draws are uniform without replacement.
///
/// Stores the drawn ids in the plan and returns the extended table.
pub fn materialize(
    plan: &mut CompletionPlan,
    primary: &EmbeddingTable,
    reserve: &EmbeddingTable,
    seed_value: u64,
) -> Result<EmbeddingTable> {
    let groups = reserve.rows_by_class()?;
    let k = plan.allocations.len();
    if groups.len() != k {
        return Err(ScarError::LengthMismatch(format!(
            "plan has {k} steps, reserve has {} classes",
            groups.len()
        )));
    }
    let mut chosen = Vec::new();
    for (j, group) in groups.iter().enumerate() {
        let want = plan.allocations[j] as usize;
        if want > group.len() {
            return Err(ScarError::InsufficientReserve {
                class: j as u32,
                available: group.len(),
                requested: want,
            });
        }
        let mut order = group.clone();
        order.shuffle(&mut seed::rng(seed_value, "materialize", j as u64));
        let mut take: Vec<usize> = order[..want].to_vec();
        take.sort_unstable();
        plan.selected_ids[j] = take.iter().map(|&r| reserve.ids()[r]).collect();
        chosen.extend_from_slice(&take);
    }
    chosen.sort_unstable();
    primary.concat(&reserve.take_rows(&chosen))
}

/// Baseline allocation strategies for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Budget drawn uniformly from the pooled reserve.
    Random,
    /// Budget split evenly across classes, remainder to the lowest indices.
    ClassAverage,
}

/// Build a baseline plan spending `budget` samples from the reserve.
///
/// Allocations never exceed the per-class reserve counts; `Random` respects
/// this by construction, `ClassAverage` clamps without redistribution.
pub fn baseline_plan(
    kind: BaselineKind,
    budget: u64,
    reserve_counts: &[u64],
    seed_value: u64,
) -> CompletionPlan {
    let k = reserve_counts.len();
    let allocations: Vec<u64> = match kind {
        BaselineKind::Random => {
            let total: u64 = reserve_counts.iter().sum();
            let spend = budget.min(total) as usize;
            let mut pool: Vec<u32> = reserve_counts
                .iter()
                .enumerate()
                .flat_map(|(j, &c)| std::iter::repeat(j as u32).take(c as usize))
                .collect();
            pool.shuffle(&mut seed::rng(seed_value, "baseline_random", 0));
            let mut counts = vec![0u64; k];
            for &class in &pool[..spend] {
                counts[class as usize] += 1;
            }
            counts
        }
        BaselineKind::ClassAverage => {
            let share = budget / k as u64;
            let remainder = (budget % k as u64) as usize;
            (0..k)
                .map(|j| {
                    let want = share + u64::from(j < remainder);
                    want.min(reserve_counts[j])
                })
                .collect()
        }
    };
    let total: u64 = allocations.iter().sum();
    let weights = if total == 0 {
        vec![0.0; k]
    } else {
        allocations.iter().map(|&a| a as f64 / total as f64).collect()
    };
    CompletionPlan {
        total_shortfall: budget,
        fill: allocations.clone(),
        weights,
        allocations,
        reserve_budget: total as f64,
        selected_ids: vec![Vec::new(); k],
    }
}
