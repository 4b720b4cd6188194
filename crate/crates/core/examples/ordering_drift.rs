//! Averaging SGD over every client ordering drifts away from full gradient
//! descent by −(Kα²/2)∇r to leading order. Shown on the two-client fixture
//! f₁ = x², f₂ = 0 and on a random quadratic.

use gradalign::algorithms::run_gd_sequence;
use gradalign::harness::pair_fixture;
use gradalign::objectives::make_quadratic_problem;
use gradalign::paramspace::{ParamVector, SeededStream};
use gradalign::problem::FederatedProblem;
use gradalign::regularizer::regularizer_report;
use gradalign::verify::{expected_sgd_over_orderings, theorem1_residual, OrderingMode};

fn main() -> gradalign::Result<()> {
    let pair = pair_fixture();
    let x0 = ParamVector::new(vec![1.0])?;
    let alpha = 0.1;
    let sgd = expected_sgd_over_orderings(&pair, &x0, alpha, &OrderingMode::Enumerate)?;
    let gd = run_gd_sequence(&pair, &x0, alpha, 2)?;
    let predicted = -alpha * alpha * regularizer_report(&pair, &x0)?.grad_r[0];
    println!("E[SGD] = {:.6}, GD = {:.6}", sgd[0], gd[0]);
    println!("drift  = {:.6}, predicted {predicted:.6}", sgd[0] - gd[0]);

    let quad = FederatedProblem::from_clients(make_quadratic_problem(3, 2, 0.8, &SeededStream::new(17))?)?;
    let v = theorem1_residual(&quad, &ParamVector::new(vec![1.0, -1.0])?, &[1e-2, 5e-3, 2.5e-3], 1.0)?;
    for (a, r) in &v.residuals {
        println!("α = {a:<7} residual after removing the drift {r:.3e}");
    }
    println!("fitted order {:.3} ({})", v.fitted_slope.unwrap_or(f64::NAN), if v.passed { "pass" } else { "fail" });
    Ok(())
}
