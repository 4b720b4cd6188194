//! A set of client objectives viewed as one federated problem `f = (1/n)Σfᵢ`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::{ClientObjective, HvpKind};
use crate::paramspace::{mean_reduce, ParamVector};

pub type SharedClient = Arc<dyn ClientObjective>;

/// Ordered list of clients sharing a parameter dimension.
///
/// The same client may appear more than once, which is how a multiset of
/// minibatches is represented.
#[derive(Debug, Clone)]
pub struct FederatedProblem {
    clients: Vec<SharedClient>,
    dim: usize,
}

impl FederatedProblem {
    pub fn new(clients: Vec<SharedClient>) -> Result<Self> {
        let dim = clients
            .first()
            .ok_or_else(|| Error::usage("a problem needs at least one client"))?
            .dim();
        if let Some(c) = clients.iter().find(|c| c.dim() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: c.dim(),
            });
        }
        Ok(FederatedProblem { clients, dim })
    }

    /// Wraps concrete clients.
    pub fn from_clients<C: ClientObjective + 'static>(clients: Vec<C>) -> Result<Self> {
        Self::new(clients.into_iter().map(|c| Arc::new(c) as SharedClient).collect())
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn client(&self, i: usize) -> &SharedClient {
        &self.clients[i]
    }

    pub fn clients(&self) -> &[SharedClient] {
        &self.clients
    }

    /// Clients at the given positions, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<FederatedProblem> {
        let picked = idx
            .iter()
            .map(|&i| {
                self.clients
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::usage(format!("client index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        FederatedProblem::new(picked)
    }

    /// True when every client has an exact Hessian-vector product.
    pub fn analytic_hvp(&self) -> bool {
        self.clients.iter().all(|c| c.hvp_kind() == HvpKind::Analytic)
    }

    /// `∇fᵢ(x)` for every client, evaluated in parallel and returned in client order.
    pub fn client_grads(&self, x: &ParamVector) -> Result<Vec<ParamVector>> {
        self.clients.par_iter().map(|c| c.grad(x)).collect()
    }

    pub fn mean_grad(&self, x: &ParamVector) -> Result<ParamVector> {
        mean_reduce(&self.client_grads(x)?)
    }

    /// `(1/n)Σfᵢ(x)`.
    pub fn value(&self, x: &ParamVector) -> Result<f64> {
        let vals: Vec<f64> = self.clients.par_iter().map(|c| c.value(x)).collect::<Result<_>>()?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `(1/n)Σ∇²fᵢ(x)·v`.
    pub fn mean_hvp(&self, x: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        let hv: Vec<ParamVector> = self.clients.par_iter().map(|c| c.hvp(x, v)).collect::<Result<_>>()?;
        mean_reduce(&hv)
    }
}
