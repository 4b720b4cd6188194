//! Gradient-variance regularizer on a random quadratic problem: its value,
//! closed-form gradient, and a finite-difference cross-check.

use gradalign::objectives::make_quadratic_problem;
use gradalign::paramspace::{ParamVector, SeededStream};
use gradalign::problem::FederatedProblem;
use gradalign::regularizer::{grad_r_fd, regularizer_report, surrogate_value};

fn main() -> gradalign::Result<()> {
    let problem = FederatedProblem::from_clients(make_quadratic_problem(4, 3, 0.6, &SeededStream::new(7))?)?;
    let x = ParamVector::new(vec![0.4, -1.2, 0.8])?;

    let report = regularizer_report(&problem, &x)?;
    println!("f(x)            = {:.6}", problem.value(&x)?);
    println!("r(x)            = {:.6}", report.r_value);
    println!("‖∇fᵢ − ∇f‖²     = {:?}", report.per_client_dev);
    println!("∇r ({:?})  = {:?}", report.method, report.grad_r.as_slice());

    let fd = grad_r_fd(&problem, &x, 1e-5)?;
    println!("finite diff ∇r  = {:?}", fd.as_slice());
    println!("difference      = {:.2e}", report.grad_r.dist(&fd)?);

    for lambda in [0.0, 0.1, 1.0] {
        println!("f + {lambda}·r = {:.6}", surrogate_value(&problem, &x, lambda)?);
    }
    Ok(())
}
