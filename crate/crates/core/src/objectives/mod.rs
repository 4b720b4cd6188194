//! Client objectives: value, exact gradient, minibatch gradient and Hessian-vector products.

mod quadratic;
mod supervised;

use std::fmt;

pub use quadratic::{make_quadratic_problem, QuadraticClient};
pub use supervised::{Activation, Model, ModelSpec, SupervisedClient};

use crate::error::{Error, Result};
use crate::paramspace::ParamVector;

/// Indices into a client's local examples forming one minibatch.
pub type MinibatchRef<'a> = &'a [usize];

/// How a client computes `∇²fᵢ(x)·v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvpKind {
    /// Exact closed form.
    Analytic,
    /// Central finite differences of the gradient.
    FiniteDifference,
}

/// One participant's local objective `fᵢ`.
///
/// Implementations are immutable after construction and may be evaluated from
/// several worker threads at once. Minibatch sampling state lives with the
/// caller.
pub trait ClientObjective: Send + Sync + fmt::Debug {
    fn id(&self) -> usize;

    fn dim(&self) -> usize;

    /// Number of local examples addressable by a minibatch.
    fn num_examples(&self) -> usize;

    fn value(&self, x: &ParamVector) -> Result<f64>;

    /// Full-data gradient.
    fn grad(&self, x: &ParamVector) -> Result<ParamVector>;

    /// Unbiased gradient estimate on the given local examples.
    fn stoch_grad(&self, x: &ParamVector, batch: MinibatchRef<'_>) -> Result<ParamVector>;

    fn hvp(&self, x: &ParamVector, v: &ParamVector) -> Result<ParamVector>;

    fn hvp_kind(&self) -> HvpKind;
}

pub(crate) fn check_dim(expected: usize, x: &ParamVector) -> Result<()> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got: x.len(),
        })
    }
}

pub(crate) fn finite_or_numeric(client: usize, data: Vec<f64>, what: &str) -> Result<ParamVector> {
    ParamVector::new(data).map_err(|_| Error::Numeric {
        client,
        msg: format!("non-finite {what}"),
    })
}

/// Step used by the finite-difference Hessian-vector product.
pub fn fd_hvp_step(x: &ParamVector, v: &ParamVector) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.norm()) / v.norm().max(1e-12)
}

/// `(∇f(x+εv) − ∇f(x−εv)) / 2ε` for any objective; zero when `v = 0`.
pub fn fd_hvp<C: ClientObjective + ?Sized>(client: &C, x: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
    check_dim(client.dim(), x)?;
    check_dim(client.dim(), v)?;
    if v.norm_sq() == 0.0 {
        return Ok(ParamVector::zeros(v.len()));
    }
    let eps = fd_hvp_step(x, v);
    let plus = client.grad(&x.plus_scaled(eps, v)?)?;
    let minus = client.grad(&x.plus_scaled(-eps, v)?)?;
    let data: Vec<f64> = plus
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect();
    finite_or_numeric(client.id(), data, "Hessian-vector product")
}

/// Central finite-difference gradient of `client.value`, used as a test oracle.
pub fn fd_grad<C: ClientObjective + ?Sized>(client: &C, x: &ParamVector, h: f64) -> Result<ParamVector> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.as_slice().to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = client.value(&ParamVector::from_slice(&probe)?)?;
        probe[i] = orig - h;
        let fm = client.value(&ParamVector::from_slice(&probe)?)?;
        probe[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    ParamVector::new(out)
}
