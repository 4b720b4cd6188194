//! GradAlign with β capped by the descent bound decreases the regularized
//! objective f̂ at every step; the trace records which bound case applied.

use gradalign::harness::blob_problem;
use gradalign::objectives::ModelSpec;
use gradalign::paramspace::SeededStream;
use gradalign::verify::{descent_condition_check, descent_rate_check, DescentSettings};

fn main() -> gradalign::Result<()> {
    let (problem, x0) = blob_problem(3, 3, 20, 4, &ModelSpec::Logistic, 5)?;
    let mut settings = DescentSettings::estimate(&problem, &x0, 0.0, 1.0, 60, 1.0, &SeededStream::new(1))?;
    settings.alpha = 0.9 / (2.0 * settings.smoothness.l1 * settings.safety);
    println!("estimated L1 = {:.4}, L2 = {:.4}, ρ = {:.4}; α = {:.4}", settings.smoothness.l1, settings.smoothness.l2, settings.smoothness.rho, settings.alpha);

    let (trace, verdict) = descent_condition_check(&problem, &x0, &settings)?;
    for (t, s) in trace.steps.iter().enumerate().step_by(10) {
        println!(
            "step {t:>3}: f̂ {:.6} → {:.6}, β used {:.4} (bound {:.4}, {:?})",
            s.f_hat_before, s.f_hat_after, s.beta_used, s.beta_bound, s.case
        );
    }
    println!("descent: {} ({})", verdict.passed, verdict.notes);
    let rate = descent_rate_check(&trace);
    println!("rate:    {} ({})", rate.passed, rate.notes);
    Ok(())
}
