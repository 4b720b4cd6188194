//! One GradAlign step, `x − α·mean ∇fᵢ(x − βvᵢ)`, compared with gradient
//! descent. On quadratics the difference is exactly −αβ∇r.

use gradalign::algorithms::{gd_step, gradalign_round};
use gradalign::objectives::make_quadratic_problem;
use gradalign::paramspace::{ParamVector, SeededStream};
use gradalign::problem::FederatedProblem;
use gradalign::regularizer::regularizer_report;

fn main() -> gradalign::Result<()> {
    let problem = FederatedProblem::from_clients(make_quadratic_problem(5, 4, 0.5, &SeededStream::new(3))?)?;
    let x = ParamVector::new(vec![1.0, 0.5, -0.5, 2.0])?;
    let alpha = 0.1;
    let grad_r = regularizer_report(&problem, &x)?.grad_r;
    let gd = gd_step(&problem, &x, alpha)?;

    for beta in [0.0, 0.05, 0.1, 0.5] {
        let round = gradalign_round(&problem, &x, alpha, beta)?;
        let drift = round.server_params.sub(&gd)?;
        let predicted = grad_r.scale(-alpha * beta)?;
        println!(
            "β = {beta:<4}  ‖drift‖ = {:.6e}  ‖drift + αβ∇r‖ = {:.2e}  largest β‖vᵢ‖ = {:.4}",
            drift.norm(),
            drift.sub(&predicted)?.norm(),
            round.displacement_norms.iter().cloned().fold(0.0, f64::max)
        );
    }
    Ok(())
}
