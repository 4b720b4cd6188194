use serde::{Deserialize, Serialize};

use super::{TheoremId, TheoremVerdict};
use crate::algorithms::gradalign_round;
use crate::error::{Error, Result};
use crate::paramspace::{ParamVector, SeededStream};
use crate::problem::FederatedProblem;
use crate::regularizer::{estimate_smoothness_constants, regularizer_report, SmoothnessEstimate};

/// Below this combined gradient norm the iterate counts as a joint critical point.
pub const CRITICAL_THRESHOLD: f64 = 1e-9;

/// Which branch of the displacement bound applied at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundCase {
    /// `‖∇f‖ > 0`: `β′² < (L1/ρ)·α‖∇f‖/r`.
    GradientNonzero,
    /// `∇f = 0`: `β′ ≤ αL1/(ρ(1+αL1))·‖∇r‖/r`.
    Stationary,
}

/// Largest admissible displacement at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBound {
    pub case: BoundCase,
    /// `β′`, infinite when `ρ = 0` or `r = 0`.
    pub beta_prime: f64,
    /// `L1/L2`, infinite when `L2 = 0`.
    pub smoothness_ratio: f64,
    /// `min(β′, L1/L2) / safety`.
    pub bound: f64,
}

/// Displacement bound from (already inflated) smoothness constants.
pub fn beta_bound(
    alpha: f64,
    grad_f_norm: f64,
    grad_r_norm: f64,
    r: f64,
    constants: &SmoothnessEstimate,
    safety: f64,
) -> BetaBound {
    let SmoothnessEstimate { l1, l2, rho, .. } = *constants;
    let case = if grad_f_norm > CRITICAL_THRESHOLD {
        BoundCase::GradientNonzero
    } else {
        BoundCase::Stationary
    };
    let beta_prime = if rho == 0.0 || r == 0.0 {
        f64::INFINITY
    } else {
        match case {
            BoundCase::GradientNonzero => (l1 * alpha * grad_f_norm / (rho * r)).sqrt(),
            BoundCase::Stationary => alpha * l1 / (rho * (1.0 + alpha * l1)) * grad_r_norm / r,
        }
    };
    let smoothness_ratio = if l2 == 0.0 { f64::INFINITY } else { l1 / l2 };
    BetaBound {
        case,
        beta_prime,
        smoothness_ratio,
        bound: beta_prime.min(smoothness_ratio) / safety,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentSettings {
    pub alpha: f64,
    /// Displacement used whenever the bound allows it.
    pub beta_policy: f64,
    pub steps: usize,
    /// Factor applied to the probe estimates and to the bound.
    pub safety: f64,
    /// Raw probe estimates; inflated by `safety` before use.
    pub smoothness: SmoothnessEstimate,
}

impl DescentSettings {
    /// Settings with smoothness probed in a ball of `radius` around `x0`.
    pub fn estimate(
        problem: &FederatedProblem,
        x0: &ParamVector,
        alpha: f64,
        beta_policy: f64,
        steps: usize,
        radius: f64,
        stream: &SeededStream,
    ) -> Result<Self> {
        Ok(DescentSettings {
            alpha,
            beta_policy,
            steps,
            safety: 2.0,
            smoothness: estimate_smoothness_constants(problem, x0, radius, 8, stream)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentStep {
    pub f_hat_before: f64,
    pub f_hat_after: f64,
    pub beta_used: f64,
    pub beta_bound: f64,
    pub case: BoundCase,
    pub grad_f_norm: f64,
    pub grad_r_norm: f64,
    /// `‖x_{t+1} − x_t‖²`.
    pub step_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub steps: Vec<DescentStep>,
    /// Inflated smoothness of `f` used by the bounds.
    pub l1: f64,
    pub alpha: f64,
    /// Whether `α < 1/(2·L1·safety)` with the raw estimate.
    pub alpha_admissible: bool,
    /// Stopped early at a joint critical point.
    pub joint_critical: bool,
}

/// Runs GradAlign with the displacement capped by the bound at every step and
/// records the surrogate `f + βr` (with that step's β) before and after.
///
/// Passes when the surrogate strictly decreases at every step taken away
/// from a joint critical point. Steps whose change is within a few ulps of
/// `f̂` are reported but not counted as increases. Divergence is returned as
/// an error.
pub fn descent_condition_check(
    problem: &FederatedProblem,
    x0: &ParamVector,
    settings: &DescentSettings,
) -> Result<(DescentTrace, TheoremVerdict)> {
    let DescentSettings { alpha, beta_policy, steps, safety, smoothness } = *settings;
    if !(alpha > 0.0) || !(beta_policy >= 0.0) || !(safety >= 1.0) || steps == 0 {
        return Err(Error::usage("descent check needs α > 0, β ≥ 0, safety ≥ 1 and at least one step"));
    }
    let inflated = smoothness.inflated(safety);
    let alpha_admissible = alpha < 1.0 / (2.0 * smoothness.l1 * safety);
    let mut trace = DescentTrace {
        steps: Vec::with_capacity(steps),
        l1: inflated.l1,
        alpha,
        alpha_admissible,
        joint_critical: false,
    };
    let mut x = x0.clone();
    for round in 0..steps {
        let rep = regularizer_report(problem, &x)?;
        let (gf, gr) = (rep.mean_grad.norm(), rep.grad_r.norm());
        if gf + gr <= CRITICAL_THRESHOLD {
            trace.joint_critical = true;
            break;
        }
        let b = beta_bound(alpha, gf, gr, rep.r_value, &inflated, safety);
        let beta = beta_policy.min(b.bound);
        let before = problem.value(&x)? + beta * rep.r_value;
        let next = gradalign_round(problem, &x, alpha, beta)
            .map_err(|e| e.in_round(round, "gradalign"))?
            .server_params;
        let after = problem.value(&next)? + beta * crate::regularizer::r_value(problem, &next)?;
        trace.steps.push(DescentStep {
            f_hat_before: before,
            f_hat_after: after,
            beta_used: beta,
            beta_bound: b.bound,
            case: b.case,
            grad_f_norm: gf,
            grad_r_norm: gr,
            step_sq: next.sub(&x)?.norm_sq(),
        });
        x = next;
    }

    let mut increases = Vec::new();
    let mut unresolved = 0usize;
    for (t, s) in trace.steps.iter().enumerate() {
        if s.f_hat_after < s.f_hat_before {
            continue;
        }
        if s.f_hat_after - s.f_hat_before <= resolution(s) {
            unresolved += 1;
        } else {
            increases.push(t);
        }
    }
    let residuals: Vec<(f64, f64)> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| (t as f64, s.f_hat_before - s.f_hat_after))
        .collect();
    let mut notes = format!("{} steps, surrogate decrease recorded per step", trace.steps.len());
    if let Some(&t) = increases.first() {
        notes.push_str(&format!("; no strict decrease at {} step(s), first at step {t}", increases.len()));
    }
    if unresolved > 0 {
        notes.push_str(&format!("; {unresolved} step(s) with a change below the rounding resolution of f̂"));
    }
    if trace.joint_critical {
        notes.push_str("; joint critical point reached");
    }
    if !alpha_admissible {
        notes.push_str(&format!(
            "; α = {alpha} violates α < 1/(2·L1·safety) = {:e}",
            1.0 / (2.0 * smoothness.l1 * safety)
        ));
    }
    let verdict = TheoremVerdict {
        theorem_id: TheoremId::Thm3,
        fitted_slope: None,
        expected_slope: None,
        tolerance: 0.0,
        passed: increases.is_empty() && alpha_admissible,
        residuals,
        notes,
    };
    Ok((trace, verdict))
}

/// Size of a change in `f̂` that cannot be told apart from rounding.
fn resolution(s: &DescentStep) -> f64 {
    8.0 * f64::EPSILON * s.f_hat_before.abs().max(s.f_hat_after.abs())
}

/// Checks that the cumulative squared update size `Σ‖Δx‖²` stays bounded.
///
/// After a burn-in of the first 10% of steps the per-step sizes must have a
/// non-increasing least-squares trend and the cumulative sum must grow no
/// faster over the second half of the window than over the first.
pub fn descent_rate_check(trace: &DescentTrace) -> TheoremVerdict {
    let n = trace.steps.len();
    let mut cum = 0.0;
    let residuals: Vec<(f64, f64)> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            cum += s.step_sq;
            ((t + 1) as f64, cum)
        })
        .collect();
    let verdict = |passed: bool, notes: String, residuals: Vec<(f64, f64)>| TheoremVerdict {
        theorem_id: TheoremId::Thm3,
        fitted_slope: None,
        expected_slope: None,
        tolerance: 0.0,
        passed,
        residuals,
        notes,
    };
    if n < 4 {
        let why = if trace.joint_critical { "joint critical point" } else { "too few steps" };
        return verdict(true, format!("trivially bounded: {why}, {n} step(s)"), residuals);
    }
    let burn = n / 10;
    let window = &trace.steps[burn..];
    let m = window.len() as f64;
    let mt = (m - 1.0) / 2.0;
    let md = window.iter().map(|s| s.step_sq).sum::<f64>() / m;
    let sxy: f64 = window.iter().enumerate().map(|(t, s)| (t as f64 - mt) * (s.step_sq - md)).sum();
    let sxx: f64 = (0..window.len()).map(|t| (t as f64 - mt).powi(2)).sum();
    let trend = sxy / sxx;
    let half = window.len() / 2;
    let first: f64 = window[..half].iter().map(|s| s.step_sq).sum();
    let second: f64 = window[half..].iter().map(|s| s.step_sq).sum();
    // slack for the extra element when the window length is odd
    let second_cmp = second * half as f64 / (window.len() - half) as f64;
    let tiny = 1e-14 * first.max(f64::MIN_POSITIVE);
    let passed = trend <= tiny && second_cmp <= first + tiny;

    let eps_min = trace
        .steps
        .iter()
        .filter(|s| s.step_sq > 0.0)
        .map(|s| (s.f_hat_before - s.f_hat_after) / (trace.l1 * s.step_sq))
        .fold(f64::INFINITY, f64::min);
    let drop = trace.steps[0].f_hat_before - trace.steps[n - 1].f_hat_after;
    let notes = format!(
        "trend of ‖Δx‖² after {burn} burn-in steps {trend:e}; half-window sums {first:e} then {second:e}; \
         observed margin ε = {eps_min:e}; (1/T)ΣL1‖Δx‖² = {:e} against the telescoped bound (f̂₀ − f̂_T)/(εT) = {:e} at T = {n}",
        trace.l1 * cum / n as f64,
        drop / (eps_min * n as f64)
    );
    verdict(passed, notes, residuals)
}
