//! Foundation data size estimation.
//!
//! Three stages:
//!
//! 1. Each measured [`ScarPoint`] yields an upper bound on the concept-space
//!    size of its step, `I_c * exp(2 I_s (I_r - I_a)^2)`.
//! 2. The bounds for one step across the sampling ladder are fitted with the
//!    saturating growth curve `alpha * (1 - exp(-lambda* I_s))`; the
//!    asymptote `alpha` is the limiting concept-space size, and the sample
//!    count needed to pin it below the target `(delta*, epsilon*)` is
//!    `ceil(ln(alpha / delta*) / (2 epsilon*^2))`.
//! 3. The per-step asymptotes combine through a truncated Bonferroni bound
//!    on the joint failure probability; solving `bound(t) = delta_E` for the
//!    smallest root `t*` gives the set-level requirement
//!    `ceil(ln(1/t*) / (2 epsilon_E^2))`.

use crate::error::{Result, ScarError};
use crate::metrics::ScarPoint;

/// Fitted growth curve for one step function.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptFit {
    pub step: usize,
    /// Asymptotic concept-space size (`alpha > 0` for a regular fit).
    pub alpha: f64,
    /// Saturation rate over the scale axis.
    pub lambda_star: f64,
    /// Least-squares residual at the returned parameters.
    pub residual: f64,
    pub points_used: usize,
}

impl ConceptFit {
    /// Degenerate fit used when every bound value is zero.
    pub fn zero(step: usize, points_used: usize) -> Self {
        Self {
            step,
            alpha: 0.0,
            lambda_star: 0.0,
            residual: 0.0,
            points_used,
        }
    }
}

/// Set-level solution of the Bonferroni bound equation.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLevelSolution {
    /// Smallest root of `bound(t) = delta_E`, absent when the bound stays
    /// below `delta_E` on all of (0, 1).
    pub t_star: Option<f64>,
    pub n_star: u64,
    /// True when no root exists: the requirement is met at any size.
    pub already_met: bool,
}

/// Complete estimate for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FdsEstimate {
    pub per_step: Vec<u64>,
    pub n_star: u64,
    pub t_star: Option<f64>,
    pub k_prime: usize,
    pub delta_star: f64,
    pub epsilon_star: f64,
    pub delta_e: f64,
    pub epsilon_e: f64,
    pub already_met: bool,
}

/// Concept-space upper bound carried by one measured point:
/// `I_c * exp(2 I_s (I_r - I_a)^2)`.
pub fn bound_value(point: &ScarPoint) -> f64 {
    point.i_c * (2.0 * point.i_s * (point.i_r - point.i_a).powi(2)).exp()
}

const LAMBDA_LO: f64 = 1e-3;
const LAMBDA_HI: f64 = 1e3;
const LAMBDA_GRID: usize = 64;

/// Residual of the best `alpha` for a fixed `lambda`, with that `alpha`.
fn profile(scales: &[f64], bounds: &[f64], lambda: f64) -> (f64, f64) {
    let mut fb = 0.0;
    let mut ff = 0.0;
    for (&s, &b) in scales.iter().zip(bounds) {
        let f = 1.0 - (-lambda * s).exp();
        fb += f * b;
        ff += f * f;
    }
    let alpha = if ff > 0.0 { fb / ff } else { 0.0 };
    let mut residual = 0.0;
    for (&s, &b) in scales.iter().zip(bounds) {
        let f = 1.0 - (-lambda * s).exp();
        residual += (alpha * f - b) * (alpha * f - b);
    }
    (alpha, residual)
}

/// Fit `alpha * (1 - exp(-lambda* I_s))` to the bound values of one step.
///
/// The residual is minimized over `lambda*` in `[1e-3, 1e3]` by scoring 64
/// log-spaced starts and refining around the best one with golden-section
/// search; `alpha` is closed-form given `lambda*`.
pub fn fit_growth(points: &[ScarPoint]) -> Result<ConceptFit> {
    fit_growth_in(points, LAMBDA_LO, LAMBDA_HI)
}

/// [`fit_growth`] over a custom `lambda*` bracket.
pub fn fit_growth_in(
    points: &[ScarPoint],
    lambda_lo: f64,
    lambda_hi: f64,
) -> Result<ConceptFit> {
    if !(lambda_lo > 0.0 && lambda_lo < lambda_hi) {
        return Err(ScarError::InvalidConfig(format!(
            "lambda bracket [{lambda_lo}, {lambda_hi}] invalid"
        )));
    }
    let mut scales: Vec<f64> = points.iter().map(|p| p.i_s).collect();
    let bounds: Vec<f64> = points.iter().map(bound_value).collect();

    let mut distinct = scales.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(ScarError::InsufficientPoints(distinct.len()));
    }
    if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(ScarError::NonFiniteValue { row: 0 });
    }
    if bounds.iter().all(|&b| b == 0.0) {
        return Err(ScarError::AllZeroBounds);
    }
    scales.shrink_to_fit();

    let log_lo = lambda_lo.ln();
    let log_hi = lambda_hi.ln();
    let grid_step = (log_hi - log_lo) / (LAMBDA_GRID - 1) as f64;
    let mut best_idx = 0;
    let mut best_res = f64::INFINITY;
    for i in 0..LAMBDA_GRID {
        let lambda = (log_lo + grid_step * i as f64).exp();
        let (_, res) = profile(&scales, &bounds, lambda);
        if res < best_res {
            best_res = res;
            best_idx = i;
        }
    }

    // Golden-section refinement on the log axis around the best grid point.
    let mut a = log_lo + grid_step * best_idx.saturating_sub(1) as f64;
    let mut b = (log_lo + grid_step * (best_idx + 1) as f64).min(log_hi);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut res_c = profile(&scales, &bounds, c.exp()).1;
    let mut res_d = profile(&scales, &bounds, d.exp()).1;
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if res_c < res_d {
            b = d;
            d = c;
            res_d = res_c;
            c = b - inv_phi * (b - a);
            res_c = profile(&scales, &bounds, c.exp()).1;
        } else {
            a = c;
            c = d;
            res_c = res_d;
            d = a + inv_phi * (b - a);
            res_d = profile(&scales, &bounds, d.exp()).1;
        }
    }
    let lambda = (0.5 * (a + b)).exp();
    let (alpha, residual) = profile(&scales, &bounds, lambda);

    Ok(ConceptFit {
        step: points[0].step,
        alpha,
        lambda_star: lambda,
        residual,
        points_used: points.len(),
    })
}

/// Per-step foundation size: `ceil(ln(alpha / delta*) / (2 epsilon*^2))`,
/// zero when the asymptote is already within the confidence target.
pub fn per_step_fds(fit: &ConceptFit, delta_star: f64, epsilon_star: f64) -> u64 {
    assert!(delta_star > 0.0 && delta_star < 1.0);
    assert!(epsilon_star > 0.0 && epsilon_star < 1.0);
    if fit.alpha <= delta_star {
        return 0;
    }
    ((fit.alpha / delta_star).ln() / (2.0 * epsilon_star * epsilon_star)).ceil() as u64
}

/// Truncated Bonferroni bound on the joint failure probability:
/// `sum_{r=1..k'} (-1)^{r+1} t^r e_r(alpha)` with `e_r` the elementary
/// symmetric polynomials.
///
/// Evaluated through the coefficients of `prod_j (1 + t alpha_j)` truncated
/// at order `k'`, accumulating the alphas in descending magnitude.
pub fn bonferroni_bound(alphas: &[f64], t: f64, k_prime: usize) -> Result<f64> {
    if k_prime == 0 || k_prime > alphas.len() || k_prime % 2 == 0 {
        return Err(ScarError::OrderOutOfRange {
            k_prime,
            k: alphas.len(),
        });
    }
    assert!(t > 0.0 && t < 1.0, "t = {t} outside (0, 1)");
    let mut ordered: Vec<f64> = alphas.to_vec();
    ordered.sort_by(|a, b| b.abs().total_cmp(&a.abs()));

    let mut coeff = vec![0.0f64; k_prime + 1];
    coeff[0] = 1.0;
    for &alpha in &ordered {
        let x = t * alpha;
        for r in (1..=k_prime).rev() {
            coeff[r] += x * coeff[r - 1];
        }
    }
    let mut bound = 0.0;
    for (r, &c) in coeff.iter().enumerate().skip(1) {
        bound += if r % 2 == 1 { c } else { -c };
    }
    Ok(bound)
}

const ROOT_TOL: f64 = 1e-12;
const SCAN_START: f64 = 1e-15;
const BRACKET_GRID: usize = 1024;

/// Solve the set-level bound for the smallest `t*` with
/// `bound(t*) = delta_E` and convert it to the total foundation size
/// `ceil(ln(1/t*) / (2 epsilon_E^2))`.
///
/// If the bound stays below `delta_E` on all of (0, 1) the requirement is
/// met at any size and `n* = 0` is returned flagged.
pub fn set_level_fds(
    alphas: &[f64],
    delta_e: f64,
    epsilon_e: f64,
    k_prime: usize,
) -> Result<SetLevelSolution> {
    if !(delta_e > 0.0 && delta_e < 1.0) {
        return Err(ScarError::InvalidConfig(format!(
            "delta_E = {delta_e} outside (0, 1)"
        )));
    }
    if epsilon_e <= 0.0 {
        return Err(ScarError::InvalidConfig(format!(
            "epsilon_E = {epsilon_e} must be positive"
        )));
    }
    if alphas.iter().any(|a| *a < 0.0 || !a.is_finite()) {
        return Err(ScarError::NonFiniteValue { row: 0 });
    }
    if alphas.iter().all(|&a| a == 0.0) {
        return Ok(SetLevelSolution {
            t_star: None,
            n_star: 0,
            already_met: true,
        });
    }
    // bound(0+) = 0 < delta_E, so a root exists iff the bound ever reaches
    // delta_E; k_prime validity is checked on the first evaluation.
    let f = |t: f64| -> Result<f64> {
        if t <= 0.0 {
            Ok(-delta_e)
        } else {
            Ok(bonferroni_bound(alphas, t, k_prime)? - delta_e)
        }
    };

    // Geometric scan upward from 1e-15 for the first sign change.
    let mut lo = 0.0f64;
    let mut hi = None;
    let mut t = SCAN_START;
    while t < 1.0 {
        if f(t)? >= 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
        t *= 2.0;
    }
    let mut hi = match hi {
        Some(h) => h,
        None => {
            // No crossing below 1: check just inside the open interval.
            let edge = 1.0 - f64::EPSILON;
            if f(edge)? < 0.0 {
                return Ok(SetLevelSolution {
                    t_star: None,
                    n_star: 0,
                    already_met: true,
                });
            }
            edge
        }
    };

    // Refine to the first crossing on a fine grid so that a non-monotone
    // bracket still yields the smallest root.
    let step = (hi - lo) / BRACKET_GRID as f64;
    if step > 0.0 {
        for i in 1..=BRACKET_GRID {
            let x = lo + step * i as f64;
            if f(x)? >= 0.0 {
                hi = x;
                break;
            }
            lo = x;
        }
    }

    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_star = 0.5 * (lo + hi);
    if !(t_star > 0.0 && t_star < 1.0) {
        return Err(ScarError::NoRoot);
    }
    let n_star = ((1.0 / t_star).ln() / (2.0 * epsilon_e * epsilon_e)).ceil() as u64;
    Ok(SetLevelSolution {
        t_star: Some(t_star),
        n_star,
        already_met: false,
    })
}
