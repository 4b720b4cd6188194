use super::descend;
use crate::error::{Error, Result};
use crate::paramspace::ParamVector;
use crate::problem::FederatedProblem;
use crate::regularizer::surrogate_grad;

/// `x ← x − α∇f_{o}(x)` for each index `o` of `order` in turn.
pub fn run_sgd_sequence(objs: &FederatedProblem, order: &[usize], x0: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if order.is_empty() {
        return Err(Error::usage("an SGD sequence needs at least one step"));
    }
    let mut x = x0.clone();
    for (step, &o) in order.iter().enumerate() {
        if o >= objs.n() {
            return Err(Error::usage(format!("sequence index {o} out of range for {} objectives", objs.n())));
        }
        let g = objs.client(o).grad(&x)?;
        x = descend(&x, alpha, &g, step + 1, "sgd_seq")?;
    }
    Ok(x)
}

/// `k` steps of gradient descent on the mean objective.
pub fn run_gd_sequence(problem: &FederatedProblem, x0: &ParamVector, alpha: f64, k: usize) -> Result<ParamVector> {
    if k == 0 {
        return Err(Error::usage("gradient descent needs at least one step"));
    }
    let mut x = x0.clone();
    for step in 1..=k {
        let g = problem.mean_grad(&x)?;
        x = descend(&x, alpha, &g, step, "gd_seq")?;
    }
    Ok(x)
}

/// `k` gradient steps on `f + (α/2)·r`.
pub fn run_surrogate_gd_sequence(
    problem: &FederatedProblem,
    x0: &ParamVector,
    alpha: f64,
    k: usize,
) -> Result<ParamVector> {
    if k == 0 {
        return Err(Error::usage("gradient descent needs at least one step"));
    }
    let mut x = x0.clone();
    for step in 1..=k {
        let g = surrogate_grad(problem, &x, alpha / 2.0)?;
        x = descend(&x, alpha, &g, step, "surrogate_gd")?;
    }
    Ok(x)
}

/// One update `x − α Σᵢ ∇fᵢ(x − (α/2)Σ_{j≠i}∇fⱼ(x))` over all objectives.
///
/// This is the single large step that reproduces the second-order effect of
/// running the objectives sequentially with step α.
pub fn linear_scaled_step(objs: &FederatedProblem, x0: &ParamVector, alpha: f64) -> Result<ParamVector> {
    let grads = objs.client_grads(x0)?;
    let k = grads.len();
    let mut total = ParamVector::zeros(x0.len());
    for i in 0..k {
        let point = if k == 1 {
            x0.clone()
        } else {
            let mut others = ParamVector::zeros(x0.len());
            for (j, g) in grads.iter().enumerate() {
                if j != i {
                    others = others.add(g)?;
                }
            }
            x0.plus_scaled(-alpha / 2.0, &others)?
        };
        total = total.add(&objs.client(i).grad(&point)?)?;
    }
    descend(x0, alpha, &total, 1, "linear_scaled")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_quadratic_problem, QuadraticClient};
    use crate::paramspace::SeededStream;

    fn fixture() -> FederatedProblem {
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
    fn both_orderings_of_the_fixture() {
        let p = fixture();
        let a = run_sgd_sequence(&p, &[0, 1], &x1(1.0), 0.1).unwrap()[0];
        let b = run_sgd_sequence(&p, &[1, 0], &x1(1.0), 0.1).unwrap()[0];
        assert!((a - 0.8).abs() < 1e-15 && (b - 0.8).abs() < 1e-15);
        let gd = run_gd_sequence(&p, &x1(1.0), 0.1, 2).unwrap()[0];
        assert!((gd - 0.81).abs() < 1e-15);
    }

    #[test]
    fn single_step_sequence_is_a_gradient_step() {
        let p = fixture();
        assert_eq!(run_sgd_sequence(&p, &[0], &x1(1.0), 0.1).unwrap()[0], 1.0 - 0.1 * 2.0);
        assert_eq!(run_gd_sequence(&p, &x1(1.0), 1e-300, 1).unwrap()[0], 1.0);
        assert!(run_gd_sequence(&p, &x1(1.0), 0.1, 0).is_err());
        assert!(run_sgd_sequence(&p, &[], &x1(1.0), 0.1).is_err());
    }

    #[test]
    fn homogeneous_objectives_agree_across_methods() {
        let q = make_quadratic_problem(1, 3, 0.0, &SeededStream::new(1)).unwrap().remove(0);
        let p = FederatedProblem::from_clients(vec![q.clone(), q.clone(), q]).unwrap();
        let x = ParamVector::new(vec![0.5, 1.0, -2.0]).unwrap();
        let gd = run_gd_sequence(&p, &x, 0.05, 3).unwrap();
        let sgd = run_sgd_sequence(&p, &[2, 0, 1], &x, 0.05).unwrap();
        let sur = run_surrogate_gd_sequence(&p, &x, 0.05, 3).unwrap();
        assert!(gd.bit_eq(&sgd));
        assert!(gd.dist(&sur).unwrap() <= 1e-15);
    }

    #[test]
    fn surrogate_fixture_closed_form() {
        // per step x ← (1 − α − α²/2)x, while GD gives (1 − α)x
        let p = fixture();
        let a = 0.1;
        let sur = run_surrogate_gd_sequence(&p, &x1(1.0), a, 2).unwrap()[0];
        assert!((sur - (1.0 - a - a * a / 2.0).powi(2)).abs() < 1e-15);
        let gd = run_gd_sequence(&p, &x1(1.0), a, 2).unwrap()[0];
        let predicted = gd - a * a * 2.0 / 2.0 * 1.0;
        assert!((sur - predicted).abs() < 5e-3);
    }

    #[test]
    fn linear_scaled_reductions() {
        let p = fixture();
        let single = p.subset(&[0]).unwrap();
        assert_eq!(linear_scaled_step(&single, &x1(1.0), 0.1).unwrap()[0], 1.0 - 0.1 * 2.0);

        let q = make_quadratic_problem(1, 2, 0.0, &SeededStream::new(2)).unwrap().remove(0);
        let f = crate::objectives::ClientObjective::grad;
        let h = FederatedProblem::from_clients(vec![q.clone(), q.clone()]).unwrap();
        let x = ParamVector::new(vec![1.0, -0.5]).unwrap();
        let a = 0.1;
        let inner = x.plus_scaled(-a / 2.0, &f(&q, &x).unwrap()).unwrap();
        let g = f(&q, &inner).unwrap();
        let expect = x.plus_scaled(-a, &g.add(&g).unwrap()).unwrap();
        assert!(linear_scaled_step(&h, &x, a).unwrap().bit_eq(&expect));
    }

    #[test]
    fn divergence_reports_step() {
        let p = FederatedProblem::from_clients(vec![QuadraticClient::scalar(0, 10.0, 0.0).unwrap()]).unwrap();
        match run_gd_sequence(&p, &x1(1.0), 1.0, 50) {
            Err(Error::Divergence(info)) => assert_eq!(info.step, 9),
            other => panic!("unexpected {other:?}"),
        }
    }
}
