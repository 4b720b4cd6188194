//! The gradient-variance regularizer `r(x) = (1/2n)Σ‖∇fᵢ(x) − ∇f(x)‖²`, its
//! gradient, the surrogate `f + λr`, and probe estimates of smoothness constants.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::{mean_reduce, ParamVector, SeededStream};
use crate::problem::FederatedProblem;

/// How `grad_r` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradRMethod {
    /// Product formula with exact client Hessian-vector products.
    Analytic,
    /// Product formula with at least one finite-difference Hessian-vector product.
    HvpAssembled,
    /// Central differences of `r` itself.
    FdOfR,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerReport {
    pub r_value: f64,
    /// `‖∇fᵢ(x) − ∇f(x)‖` per client.
    pub per_client_dev: Vec<f64>,
    pub grad_r: ParamVector,
    pub method: GradRMethod,
    /// `∇f(x)`, computed on the way.
    pub mean_grad: ParamVector,
}

/// Deviations `dᵢ = ∇fᵢ − ∇f` together with `∇f`.
pub fn deviations(problem: &FederatedProblem, x: &ParamVector) -> Result<(ParamVector, Vec<ParamVector>)> {
    let grads = problem.client_grads(x)?;
    let mean = mean_reduce(&grads)?;
    let devs = grads.iter().map(|g| g.sub(&mean)).collect::<Result<Vec<_>>>()?;
    Ok((mean, devs))
}

/// `r(x)` alone.
pub fn r_value(problem: &FederatedProblem, x: &ParamVector) -> Result<f64> {
    let (_, devs) = deviations(problem, x)?;
    Ok(devs.iter().map(ParamVector::norm_sq).sum::<f64>() / (2.0 * devs.len() as f64))
}

/// `r`, per-client deviation norms, and `∇r = (1/n)Σ∇²fᵢ·dᵢ − ∇²f·(1/n)Σdᵢ`.
///
/// The second term vanishes in exact arithmetic; keeping it cancels rounding
/// in the computed deviations.
pub fn regularizer_report(problem: &FederatedProblem, x: &ParamVector) -> Result<RegularizerReport> {
    let (mean_grad, devs) = deviations(problem, x)?;
    let n = devs.len() as f64;
    let per_client_dev: Vec<f64> = devs.iter().map(ParamVector::norm).collect();
    let r_value = devs.iter().map(ParamVector::norm_sq).sum::<f64>() / (2.0 * n);

    let hd: Vec<ParamVector> = problem
        .clients()
        .par_iter()
        .zip(devs.par_iter())
        .map(|(c, d)| c.hvp(x, d))
        .collect::<Result<_>>()?;
    let first = mean_reduce(&hd)?;
    let dbar = mean_reduce(&devs)?;
    let grad_r = first.sub(&problem.mean_hvp(x, &dbar)?)?;

    let method = if problem.analytic_hvp() {
        GradRMethod::Analytic
    } else {
        GradRMethod::HvpAssembled
    };
    Ok(RegularizerReport {
        r_value,
        per_client_dev,
        grad_r,
        method,
        mean_grad,
    })
}

/// Central-difference gradient of `x ↦ r(x)`, used to cross-check the product formula.
pub fn grad_r_fd(problem: &FederatedProblem, x: &ParamVector, h: f64) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let mut probe = x.as_slice().to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let rp = r_value(problem, &ParamVector::from_slice(&probe)?)?;
        probe[k] = orig - h;
        let rm = r_value(problem, &ParamVector::from_slice(&probe)?)?;
        probe[k] = orig;
        out.push((rp - rm) / (2.0 * h));
    }
    ParamVector::new(out)
}

/// `f(x) + λ·r(x)`.
pub fn surrogate_value(problem: &FederatedProblem, x: &ParamVector, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::usage("surrogate weight must be non-negative"));
    }
    let f = problem.value(x)?;
    if lambda == 0.0 {
        return Ok(f);
    }
    Ok(f + lambda * r_value(problem, x)?)
}

/// `∇f(x) + λ∇r(x)`.
pub fn surrogate_grad(problem: &FederatedProblem, x: &ParamVector, lambda: f64) -> Result<ParamVector> {
    let rep = regularizer_report(problem, x)?;
    rep.mean_grad.plus_scaled(lambda, &rep.grad_r)
}

/// Empirical Lipschitz ratios over random probe points; lower bounds of the true constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    /// Smoothness of `f`.
    pub l1: f64,
    /// Smoothness of `r`.
    pub l2: f64,
    /// Lipschitz constant of the mean Hessian along the probe directions.
    pub rho: f64,
    pub probes: usize,
}

impl SmoothnessEstimate {
    /// Every constant multiplied by `factor`.
    pub fn inflated(&self, factor: f64) -> SmoothnessEstimate {
        SmoothnessEstimate {
            l1: self.l1 * factor,
            l2: self.l2 * factor,
            rho: self.rho * factor,
            probes: self.probes,
        }
    }
}

/// Ratio estimates over all pairs of `probes` points drawn uniformly from the
/// ball of `radius` around `center`.
pub fn estimate_smoothness_constants(
    problem: &FederatedProblem,
    center: &ParamVector,
    radius: f64,
    probes: usize,
    stream: &SeededStream,
) -> Result<SmoothnessEstimate> {
    if probes < 2 || !(radius > 0.0) {
        return Err(Error::usage("smoothness estimation needs probes ≥ 2 and radius > 0"));
    }
    let d = center.len();
    let mut rng = stream.derive("points", 0).rng();
    let points = (0..probes)
        .map(|_| {
            let dir = random_unit(d, &mut rng)?;
            let u: f64 = rng.random();
            center.plus_scaled(radius * u.powf(1.0 / d as f64), &dir)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream.derive("directions", 0).rng();
    let dirs = (0..3).map(|_| random_unit(d, &mut rng)).collect::<Result<Vec<_>>>()?;

    let mut grads = Vec::with_capacity(probes);
    let mut grad_rs = Vec::with_capacity(probes);
    let mut curv = Vec::with_capacity(probes);
    for p in &points {
        let rep = regularizer_report(problem, p)?;
        grads.push(rep.mean_grad);
        grad_rs.push(rep.grad_r);
        curv.push(dirs.iter().map(|w| problem.mean_hvp(p, w)).collect::<Result<Vec<_>>>()?);
    }

    let (mut l1, mut l2, mut rho) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..probes {
        for j in i + 1..probes {
            let gap = points[i].dist(&points[j])?;
            if gap == 0.0 {
                continue;
            }
            l1 = l1.max(grads[i].dist(&grads[j])? / gap);
            l2 = l2.max(grad_rs[i].dist(&grad_rs[j])? / gap);
            for (a, b) in curv[i].iter().zip(&curv[j]) {
                rho = rho.max(a.dist(b)? / gap);
            }
        }
    }
    Ok(SmoothnessEstimate { l1, l2, rho, probes })
}

fn random_unit(d: usize, rng: &mut impl Rng) -> Result<ParamVector> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return ParamVector::new(v.into_iter().map(|a| a / norm).collect());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_blobs;
    use crate::objectives::{make_quadratic_problem, Model, ModelSpec, QuadraticClient, SupervisedClient};
    use crate::paramspace::DenseMatrix;
    use proptest::prelude::*;

    fn pair() -> FederatedProblem {
        FederatedProblem::from_clients(vec![
            QuadraticClient::scalar(0, 2.0, 0.0).unwrap(),
            QuadraticClient::scalar(1, 0.0, 0.0).unwrap(),
        ])
        .unwrap()
    }

    fn x1(v: f64) -> ParamVector {
        ParamVector::new(vec![v]).unwrap()
    }

    #[test]
    fn pair_fixture() {
        let rep = regularizer_report(&pair(), &x1(1.0)).unwrap();
        assert_eq!(rep.r_value, 0.5);
        assert_eq!(rep.grad_r.as_slice(), &[1.0]);
        assert_eq!(rep.per_client_dev, vec![1.0, 1.0]);
        assert_eq!(rep.method, GradRMethod::Analytic);
    }

    #[test]
    fn homogeneous_clients_have_zero_regularizer() {
        let q = make_quadratic_problem(1, 3, 0.0, &SeededStream::new(4)).unwrap().remove(0);
        let p = FederatedProblem::from_clients(vec![q.clone(), q.clone(), q]).unwrap();
        let x = ParamVector::new(vec![0.3, -1.0, 2.0]).unwrap();
        let rep = regularizer_report(&p, &x).unwrap();
        assert_eq!(rep.r_value, 0.0);
        assert_eq!(rep.grad_r.max_abs(), 0.0);
        assert!(rep.per_client_dev.iter().all(|&d| d == 0.0));
        assert_eq!(surrogate_value(&p, &x, 3.0).unwrap(), p.value(&x).unwrap());
    }

    #[test]
    fn opposite_gradients() {
        // ∇f₁ = (1,0), ∇f₂ = (−1,0) at the origin
        let mk = |id, s: f64| {
            QuadraticClient::new(id, DenseMatrix::identity(2), ParamVector::new(vec![s, 0.0]).unwrap()).unwrap()
        };
        let p = FederatedProblem::from_clients(vec![mk(0, 1.0), mk(1, -1.0)]).unwrap();
        assert_eq!(r_value(&p, &ParamVector::zeros(2)).unwrap(), 0.5);
    }

    #[test]
    fn surrogate_on_pair() {
        let p = pair();
        assert_eq!(surrogate_value(&p, &x1(1.0), 0.0).unwrap(), 0.5);
        assert!((surrogate_value(&p, &x1(1.0), 0.1).unwrap() - 0.55).abs() < 1e-15);
        assert!(surrogate_value(&p, &x1(1.0), -1.0).is_err());
    }

    #[test]
    fn quadratic_grad_r_matches_closed_form() {
        let clients = make_quadratic_problem(4, 3, 0.4, &SeededStream::new(7)).unwrap();
        let p = FederatedProblem::from_clients(clients.clone()).unwrap();
        let x = ParamVector::new(vec![0.5, -0.7, 1.3]).unwrap();
        let rep = regularizer_report(&p, &x).unwrap();

        // brute force: (1/n)Σ(Aᵢ−Ā)((Aᵢ−Ā)x + (bᵢ−b̄))
        let (n, d) = (4usize, 3usize);
        let mut abar = vec![0.0; d * d];
        let mut bbar = vec![0.0; d];
        for c in &clients {
            for k in 0..d * d {
                abar[k] += c.matrix().as_slice()[k] / n as f64;
            }
            for k in 0..d {
                bbar[k] += c.offset()[k] / n as f64;
            }
        }
        let mut expect = vec![0.0; d];
        for c in &clients {
            let da: Vec<f64> = (0..d * d).map(|k| c.matrix().as_slice()[k] - abar[k]).collect();
            let dev: Vec<f64> = (0..d)
                .map(|r| (0..d).map(|k| da[r * d + k] * x[k]).sum::<f64>() + c.offset()[r] - bbar[r])
                .collect();
            for r in 0..d {
                expect[r] += (0..d).map(|k| da[r * d + k] * dev[k]).sum::<f64>() / n as f64;
            }
        }
        let expect = ParamVector::new(expect).unwrap();
        assert!(rep.grad_r.dist(&expect).unwrap() <= 1e-12 * expect.norm().max(1.0));

        let fd = grad_r_fd(&p, &x, 1e-5).unwrap();
        assert!(rep.grad_r.dist(&fd).unwrap() <= 1e-10 * rep.grad_r.norm().max(1.0) + 1e-9);
    }

    #[test]
    fn supervised_grad_r_matches_finite_differences() {
        let ds = gen_blobs(3, 8, 4, 2.0, &SeededStream::new(1)).unwrap();
        let model = Model::new(&ModelSpec::default_mlp(), 4, 3).unwrap();
        let clients: Vec<SupervisedClient> = (0..3)
            .map(|i| {
                let idx: Vec<usize> = (0..ds.len()).filter(|k| k % 3 == i).collect();
                let (f, l) = ds.select(&idx);
                SupervisedClient::new(i, f, l, model.clone(), 1e-3).unwrap()
            })
            .collect();
        let p = FederatedProblem::from_clients(clients).unwrap();
        let x = model.init_params(&SeededStream::new(2));
        let rep = regularizer_report(&p, &x).unwrap();
        assert_eq!(rep.method, GradRMethod::HvpAssembled);
        let fd = grad_r_fd(&p, &x, 1e-5).unwrap();
        assert!(rep.grad_r.dist(&fd).unwrap() <= 1e-5 * rep.grad_r.norm().max(1e-3), "{:?}", rep.grad_r.dist(&fd));
    }

    #[test]
    fn smoothness_of_single_quadratic() {
        let p = FederatedProblem::from_clients(vec![QuadraticClient::scalar(0, 2.0, 0.0).unwrap()]).unwrap();
        let est = estimate_smoothness_constants(&p, &x1(0.0), 1.0, 8, &SeededStream::new(0)).unwrap();
        assert_eq!(est.l1, 2.0);
        assert!(est.rho <= 1e-8);
        assert_eq!(est.l2, 0.0);
    }

    #[test]
    fn smoothness_of_pair_and_homogeneous() {
        let est = estimate_smoothness_constants(&pair(), &x1(1.0), 0.5, 6, &SeededStream::new(3)).unwrap();
        assert!((est.l2 - 1.0).abs() <= 1e-6);
        assert!((est.l1 - 1.0).abs() <= 1e-12);

        let q = make_quadratic_problem(1, 2, 0.0, &SeededStream::new(4)).unwrap().remove(0);
        let p = FederatedProblem::from_clients(vec![q.clone(), q]).unwrap();
        let est = estimate_smoothness_constants(&p, &ParamVector::zeros(2), 1.0, 5, &SeededStream::new(5)).unwrap();
        assert!(est.l2 <= 1e-8);
        assert!(estimate_smoothness_constants(&p, &ParamVector::zeros(2), 1.0, 1, &SeededStream::new(5)).is_err());
    }

    proptest! {
        #[test]
        fn report_invariants(seed in any::<u64>(), spread in 0.0f64..1.0) {
            let p = FederatedProblem::from_clients(make_quadratic_problem(3, 2, spread, &SeededStream::new(seed)).unwrap()).unwrap();
            let x = ParamVector::new(vec![0.2, -0.4]).unwrap();
            let rep = regularizer_report(&p, &x).unwrap();
            let from_devs = rep.per_client_dev.iter().map(|d| d * d).sum::<f64>() / 6.0;
            prop_assert!((rep.r_value - from_devs).abs() <= 1e-12 * rep.r_value.max(1e-300));
            prop_assert_eq!(rep.r_value == 0.0, rep.per_client_dev.iter().all(|&d| d == 0.0));
        }

        #[test]
        fn common_linear_term_leaves_r_unchanged(seed in any::<u64>(), c0 in -3.0f64..3.0, c1 in -3.0f64..3.0) {
            let base = make_quadratic_problem(3, 2, 0.5, &SeededStream::new(seed)).unwrap();
            let shifted: Vec<QuadraticClient> = base
                .iter()
                .map(|q| {
                    let b = q.offset().add(&ParamVector::new(vec![c0, c1]).unwrap()).unwrap();
                    QuadraticClient::new(crate::objectives::ClientObjective::id(q), q.matrix().clone(), b).unwrap()
                })
                .collect();
            let x = ParamVector::new(vec![0.7, 0.1]).unwrap();
            let r0 = r_value(&FederatedProblem::from_clients(base).unwrap(), &x).unwrap();
            let r1 = r_value(&FederatedProblem::from_clients(shifted).unwrap(), &x).unwrap();
            prop_assert!((r0 - r1).abs() <= 1e-10 * r0.max(1.0));
        }
    }
}
