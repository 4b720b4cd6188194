//! Numerical checks of the displacement expansion and every drift and descent
//! claim: residuals at shrinking scales, log-log order fits, and one
//! machine-readable verdict per check.

mod checks;
mod descent;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use checks::{
    coefficient_bridge_check, expected_sgd_over_orderings, linear_scaled_check, perstep_equivalence_check,
    surrogate_gd_check, taylor_displaced_gradient_check, theorem1_residual, theorem2_residual, theorem4_joint_residual,
    theorem4_residual, theorem5_residual, OrderingMode,
};
pub use descent::{
    beta_bound, descent_condition_check, descent_rate_check, BetaBound, BoundCase, DescentSettings, DescentStep,
    DescentTrace,
};

use crate::error::{Error, Result};

/// Residuals below this are indistinguishable from rounding and excluded from fits.
pub const EXACT_FLOOR: f64 = 1e-13;

/// Default allowed deviation of a fitted order from its predicted value.
pub const SLOPE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    #[serde(rename = "lemma1")]
    Lemma1,
    #[serde(rename = "thm1")]
    Thm1,
    #[serde(rename = "thm2")]
    Thm2,
    #[serde(rename = "thm3")]
    Thm3,
    #[serde(rename = "thm4")]
    Thm4,
    #[serde(rename = "thm5")]
    Thm5,
    #[serde(rename = "appB")]
    AppB,
    #[serde(rename = "appD3")]
    AppD3,
    #[serde(rename = "appE")]
    AppE,
}

impl TheoremId {
    pub const ALL: [TheoremId; 9] = [
        TheoremId::Lemma1,
        TheoremId::Thm1,
        TheoremId::Thm2,
        TheoremId::Thm3,
        TheoremId::Thm4,
        TheoremId::Thm5,
        TheoremId::AppB,
        TheoremId::AppD3,
        TheoremId::AppE,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TheoremId::Lemma1 => "lemma1",
            TheoremId::Thm1 => "thm1",
            TheoremId::Thm2 => "thm2",
            TheoremId::Thm3 => "thm3",
            TheoremId::Thm4 => "thm4",
            TheoremId::Thm5 => "thm5",
            TheoremId::AppB => "appB",
            TheoremId::AppD3 => "appD3",
            TheoremId::AppE => "appE",
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one check. Field order matches the serialized line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub theorem_id: TheoremId,
    /// Fitted log-log order; `None` for exactness and descent checks.
    pub fitted_slope: Option<f64>,
    pub expected_slope: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
    /// `(scale, residual)` pairs in evaluation order.
    pub residuals: Vec<(f64, f64)>,
    pub notes: String,
}

impl TheoremVerdict {
    /// A failed verdict carrying the error that stopped the check.
    pub fn from_error(id: TheoremId, err: &Error) -> Self {
        TheoremVerdict {
            theorem_id: id,
            fitted_slope: None,
            expected_slope: None,
            tolerance: 0.0,
            passed: false,
            residuals: Vec::new(),
            notes: format!("check aborted: {err}"),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdicts always serialize")
    }

    pub(crate) fn with_note(mut self, note: impl AsRef<str>) -> Self {
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        self.notes.push_str(note.as_ref());
        self
    }
}

/// Result of fitting `log(residual)` against `log(scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeFit {
    Slope { slope: f64, used: usize, dropped: usize },
    /// Fewer than two residuals above [`EXACT_FLOOR`].
    Exact { dropped: usize },
}

/// Least-squares slope of `log r` on `log s`.
///
/// Needs at least three pairs with strictly decreasing positive scales and
/// non-negative residuals. Residuals under [`EXACT_FLOOR`] are dropped.
pub fn fit_loglog_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 3 {
        return Err(Error::usage("a slope fit needs at least three (scale, residual) pairs"));
    }
    if pairs.iter().any(|&(s, r)| !(s > 0.0) || !(r >= 0.0) || !s.is_finite() || !r.is_finite()) {
        return Err(Error::usage("scales must be positive and residuals non-negative and finite"));
    }
    if pairs.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::usage("scales must be strictly decreasing"));
    }
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|&&(_, r)| r >= EXACT_FLOOR)
        .map(|&(s, r)| (s.ln(), r.ln()))
        .collect();
    let dropped = pairs.len() - usable.len();
    if usable.len() < 2 {
        return Ok(SlopeFit::Exact { dropped });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(SlopeFit::Slope {
        slope: sxy / sxx,
        used: usable.len(),
        dropped,
    })
}

/// How a fitted order is compared with the predicted one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SlopeRule {
    /// `|slope − expected| ≤ tol`.
    Within,
    /// `slope ≥ expected − tol`; for remainders whose order may exceed the bound.
    AtLeast,
}

pub(crate) fn slope_verdict(
    id: TheoremId,
    residuals: Vec<(f64, f64)>,
    expected: f64,
    tol: f64,
    rule: SlopeRule,
) -> Result<TheoremVerdict> {
    let fit = fit_loglog_slope(&residuals)?;
    let (fitted, passed, notes) = match fit {
        SlopeFit::Slope { slope, dropped, .. } => {
            let ok = match rule {
                SlopeRule::Within => (slope - expected).abs() <= tol,
                SlopeRule::AtLeast => slope >= expected - tol,
            };
            let mut n = format!("fitted order {slope:.4} against {expected}");
            if rule == SlopeRule::AtLeast {
                n.push_str(" (one-sided: order at least expected − tolerance)");
            }
            if dropped > 0 {
                n.push_str(&format!("; {dropped} residual(s) below {EXACT_FLOOR:e} dropped as exact"));
            }
            (Some(slope), ok, n)
        }
        SlopeFit::Exact { dropped } => (
            None,
            true,
            format!("exactness regime: {dropped} of {} residuals below {EXACT_FLOOR:e}", residuals.len()),
        ),
    };
    Ok(TheoremVerdict {
        theorem_id: id,
        fitted_slope: fitted,
        expected_slope: Some(expected),
        tolerance: tol,
        passed,
        residuals,
        notes,
    })
}

/// Passes when every residual is at most `tol`.
pub(crate) fn exactness_verdict(id: TheoremId, residuals: Vec<(f64, f64)>, tol: f64, what: &str) -> TheoremVerdict {
    let worst = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    TheoremVerdict {
        theorem_id: id,
        fitted_slope: None,
        expected_slope: None,
        tolerance: tol,
        passed: worst <= tol,
        notes: format!("{what}: worst residual {worst:e} against tolerance {tol:e}"),
        residuals,
    }
}
