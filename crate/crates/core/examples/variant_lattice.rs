//! Every algorithm variant through the single `run_round` entry point, plus
//! the settings under which variants collapse onto each other.

use gradalign::algorithms::{run_round, AlgoConfig, Variant};
use gradalign::datagen::{BatchSize, MinibatchSchedule};
use gradalign::harness::blob_problem;
use gradalign::objectives::ModelSpec;
use gradalign::paramspace::{ParamVector, SeededStream};
use gradalign::problem::FederatedProblem;

fn schedules(p: &FederatedProblem) -> Vec<MinibatchSchedule> {
    (0..p.n())
        .map(|i| {
            let stream = SeededStream::new(9).derive("minibatch", i as u64);
            MinibatchSchedule::new(i, p.client(i).num_examples(), BatchSize::Fixed(5), stream).unwrap()
        })
        .collect()
}

fn step(cfg: AlgoConfig, p: &FederatedProblem, x: &ParamVector) -> gradalign::Result<ParamVector> {
    Ok(run_round(&cfg, p, x, &mut schedules(p), &SeededStream::new(1))?.server_params)
}

fn main() -> gradalign::Result<()> {
    let (p, x0) = blob_problem(4, 4, 15, 3, &ModelSpec::Logistic, 2)?;
    let base = |v| AlgoConfig::new(v, 0.1).with_local_steps(3).with_batch(BatchSize::Fixed(5));
    for v in Variant::ALL {
        let cfg = base(v).with_beta(0.3).with_mu(0.5);
        let x = step(cfg, &p, &x0)?;
        println!("{:<14} ‖x₁ − x₀‖ = {:.5}  f(x₁) = {:.5}", v.name(), x.dist(&x0)?, p.value(&x)?);
    }
    let avg = step(base(Variant::Fedavg), &p, &x0)?;
    println!("fedga β = 0 equals fedavg:  {}", step(base(Variant::Fedga).with_beta(0.0), &p, &x0)?.bit_eq(&avg));
    println!("fedprox μ = 0 equals fedavg: {}", step(base(Variant::Fedprox).with_mu(0.0), &p, &x0)?.bit_eq(&avg));
    Ok(())
}
