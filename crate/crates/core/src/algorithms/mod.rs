//! Optimization procedures as pure transitions from server parameters to the next round.
//!
//! Sequence operations (`run_*_sequence`, [`linear_scaled_step`]) act on the
//! clients of a [`FederatedProblem`] treated as a multiset of minibatch
//! objectives. Round operations run one communication round with per-client
//! work in parallel and deterministic averaging.

mod rounds;
mod sequence;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use rounds::{
    expected_round, fedavg_round, fedga_perstep_round, fedga_round, fedprox_round, full_schedules, gd_step,
    gradalign_round, largebatch_gd_round, scaffold_round,
};
pub use sequence::{linear_scaled_step, run_gd_sequence, run_sgd_sequence, run_surrogate_gd_sequence};

use crate::datagen::{BatchSize, MinibatchSchedule};
use crate::error::{DivergenceInfo, Error, Result};
use crate::objectives::ClientObjective;
use crate::paramspace::{ParamVector, SeededStream};
use crate::problem::FederatedProblem;

/// Iterates with a larger norm abort the computation.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SgdSeq,
    GdSeq,
    SurrogateGd,
    LinearScaled,
    Gradalign,
    Fedavg,
    Fedga,
    FedgaPerstep,
    Scaffold,
    Fedprox,
    LargebatchGd,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::SgdSeq,
        Variant::GdSeq,
        Variant::SurrogateGd,
        Variant::LinearScaled,
        Variant::Gradalign,
        Variant::Fedavg,
        Variant::Fedga,
        Variant::FedgaPerstep,
        Variant::Scaffold,
        Variant::Fedprox,
        Variant::LargebatchGd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SgdSeq => "sgd_seq",
            Variant::GdSeq => "gd_seq",
            Variant::SurrogateGd => "surrogate_gd",
            Variant::LinearScaled => "linear_scaled",
            Variant::Gradalign => "gradalign",
            Variant::Fedavg => "fedavg",
            Variant::Fedga => "fedga",
            Variant::FedgaPerstep => "fedga_perstep",
            Variant::Scaffold => "scaffold",
            Variant::Fedprox => "fedprox",
            Variant::LargebatchGd => "largebatch_gd",
        }
    }

    /// Communication rounds per optimization round under full participation.
    pub fn comm_rounds(self) -> usize {
        match self {
            Variant::Gradalign | Variant::Fedga | Variant::FedgaPerstep | Variant::Scaffold => 2,
            _ => 1,
        }
    }

    pub fn uses_beta(self) -> bool {
        matches!(self, Variant::Gradalign | Variant::Fedga | Variant::FedgaPerstep)
    }

    /// Whether `local_steps` changes what one round does.
    pub fn uses_local_steps(self) -> bool {
        matches!(
            self,
            Variant::GdSeq
                | Variant::SurrogateGd
                | Variant::Fedavg
                | Variant::Fedga
                | Variant::FedgaPerstep
                | Variant::Scaffold
                | Variant::Fedprox
        )
    }

    /// Gradient steps taken per participating client in one round.
    pub fn steps_per_client(self, local_steps: usize) -> usize {
        if self.uses_local_steps() {
            local_steps
        } else {
            1
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::usage(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgoConfig {
    pub variant: Variant,
    /// Step size α.
    pub alpha: f64,
    /// Displacement size β.
    pub beta: f64,
    /// Local steps K.
    pub local_steps: usize,
    pub batch_size: BatchSize,
    /// Proximal weight μ.
    pub mu: f64,
}

impl AlgoConfig {
    pub fn new(variant: Variant, alpha: f64) -> Self {
        AlgoConfig {
            variant,
            alpha,
            beta: 0.0,
            local_steps: 1,
            batch_size: BatchSize::Full,
            mu: 0.0,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_local_steps(mut self, k: usize) -> Self {
        self.local_steps = k;
        self
    }

    pub fn with_batch(mut self, b: BatchSize) -> Self {
        self.batch_size = b;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Checks ranges and returns warnings for fields the variant ignores.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("algo.alpha", None, "must be a positive finite number"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("algo.beta", None, "must be a non-negative finite number"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config("algo.mu", None, "must be a non-negative finite number"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("algo.K", None, "must be at least 1"));
        }
        if self.batch_size == BatchSize::Fixed(0) {
            return Err(Error::config("algo.batch_size", None, "must be at least 1"));
        }
        let mut warnings = Vec::new();
        if self.beta != 0.0 && !self.variant.uses_beta() {
            warnings.push(format!("algo.beta is ignored by {}", self.variant));
        }
        if self.mu != 0.0 && self.variant != Variant::Fedprox {
            warnings.push(format!("algo.mu is ignored by {}", self.variant));
        }
        if self.local_steps != 1 && !self.variant.uses_local_steps() {
            warnings.push(format!("algo.K is ignored by {}", self.variant));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub server_params: ParamVector,
    /// Final local iterate of every participating client; empty for
    /// sequence variants, which have no per-client state.
    pub per_client_final: Vec<ParamVector>,
    pub comm_rounds_used: usize,
    /// Size of the per-client correction: `β‖vᵢ‖` for displacement methods,
    /// `‖∇f − ∇fᵢ‖` for control variates, zero otherwise.
    pub displacement_norms: Vec<f64>,
}

/// Runs one round of `cfg.variant` on the participating clients.
///
/// `schedules[i]` belongs to `problem.client(i)`. `order` drives the random
/// visiting order of `sgd_seq` and is unused otherwise.
pub fn run_round(
    cfg: &AlgoConfig,
    problem: &FederatedProblem,
    x: &ParamVector,
    schedules: &mut [MinibatchSchedule],
    order: &SeededStream,
) -> Result<RoundResult> {
    let (a, b, k, mu) = (cfg.alpha, cfg.beta, cfg.local_steps, cfg.mu);
    let sequential = |server: ParamVector| RoundResult {
        server_params: server,
        per_client_final: Vec::new(),
        comm_rounds_used: 1,
        displacement_norms: vec![0.0; problem.n()],
    };
    match cfg.variant {
        Variant::SgdSeq => {
            check_schedules(problem, schedules)?;
            let mut perm: Vec<usize> = (0..problem.n()).collect();
            perm.shuffle(&mut order.rng());
            let mut y = x.clone();
            for (step, &i) in perm.iter().enumerate() {
                let g = local_grad(problem.client(i).as_ref(), &y, &mut schedules[i])?;
                y = descend(&y, a, &g, step + 1, "sgd_seq")?;
            }
            Ok(sequential(y))
        }
        Variant::GdSeq => Ok(sequential(run_gd_sequence(problem, x, a, k)?)),
        Variant::SurrogateGd => Ok(sequential(run_surrogate_gd_sequence(problem, x, a, k)?)),
        Variant::LinearScaled => Ok(sequential(linear_scaled_step(problem, x, a)?)),
        Variant::Gradalign => gradalign_round(problem, x, a, b),
        Variant::LargebatchGd => largebatch_gd_round(problem, x, a),
        Variant::Fedavg => fedavg_round(problem, x, a, k, schedules),
        Variant::Fedga => fedga_round(problem, x, a, b, k, schedules),
        Variant::FedgaPerstep => fedga_perstep_round(problem, x, a, b, k, schedules),
        Variant::Scaffold => scaffold_round(problem, x, a, k, schedules),
        Variant::Fedprox => fedprox_round(problem, x, a, k, mu, schedules),
    }
}

/// Gradient for one local step: the full local gradient when the schedule
/// covers every example, otherwise a minibatch gradient.
pub(crate) fn local_grad(
    client: &dyn ClientObjective,
    y: &ParamVector,
    schedule: &mut MinibatchSchedule,
) -> Result<ParamVector> {
    if schedule.is_full() {
        client.grad(y)
    } else {
        client.stoch_grad(y, &schedule.next_batch())
    }
}

pub(crate) fn check_schedules(problem: &FederatedProblem, schedules: &[MinibatchSchedule]) -> Result<()> {
    if schedules.len() == problem.n() {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "{} schedules supplied for {} clients",
            schedules.len(),
            problem.n()
        )))
    }
}

pub(crate) fn diverged(step: usize, norm: f64, algo: &str) -> Error {
    Error::Divergence(DivergenceInfo {
        step,
        norm,
        round: None,
        algorithm: Some(algo.to_string()),
    })
}

/// Rejects non-finite iterates and iterates beyond [`DIVERGENCE_NORM`].
pub(crate) fn guard(y: ParamVector, step: usize, algo: &str) -> Result<ParamVector> {
    let norm = y.norm();
    if norm.is_finite() && norm <= DIVERGENCE_NORM {
        Ok(y)
    } else {
        Err(diverged(step, norm, algo))
    }
}

/// `y − α·g` with the divergence guard applied.
pub(crate) fn descend(y: &ParamVector, alpha: f64, g: &ParamVector, step: usize, algo: &str) -> Result<ParamVector> {
    match y.plus_scaled(-alpha, g) {
        Ok(next) => guard(next, step, algo),
        Err(Error::NonFinite(_)) => Err(diverged(step, f64::INFINITY, algo)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("fedfoo".parse::<Variant>().is_err());
    }

    #[test]
    fn communication_accounting() {
        let two: Vec<Variant> = Variant::ALL.into_iter().filter(|v| v.comm_rounds() == 2).collect();
        assert_eq!(two, vec![Variant::Gradalign, Variant::Fedga, Variant::FedgaPerstep, Variant::Scaffold]);
    }

    #[test]
    fn validation() {
        let cfg = AlgoConfig::new(Variant::Fedavg, 0.1).with_beta(0.3);
        assert_eq!(cfg.validate().unwrap().len(), 1);
        assert!(AlgoConfig::new(Variant::Fedga, 0.0).validate().is_err());
        assert!(AlgoConfig::new(Variant::Fedga, 0.1).with_local_steps(0).validate().is_err());
        assert!(AlgoConfig::new(Variant::Fedga, 0.1).with_beta(0.2).validate().unwrap().is_empty());
    }

    #[test]
    fn guard_rejects_large_iterates() {
        let y = ParamVector::new(vec![2e8]).unwrap();
        match guard(y, 4, "fedavg") {
            Err(Error::Divergence(info)) => {
                assert_eq!(info.step, 4);
                assert_eq!(info.algorithm.as_deref(), Some("fedavg"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
