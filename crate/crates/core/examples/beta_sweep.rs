//! Sweep the FedGA displacement β and read back the summary table.

use gradalign::harness::{run_sweep, ExperimentConfig};

fn main() -> gradalign::Result<()> {
    let cfg = ExperimentConfig::parse_str(
        "problem.n_classes = 4\nproblem.per_class = 50\nproblem.input_dim = 6\nproblem.n_clients = 4\n\
         problem.partition = label_shard\nproblem.model = mlp\nproblem.hidden = 12\n\
         algo.variant = fedga\nalgo.alpha = 0.05\nalgo.K = 4\nalgo.batch_size = 8\n\
         run.rounds = 40\nrun.eval_every = 5\nsweep.param = beta\nsweep.values = 0, 0.1, 0.5, 2\n",
        ".",
    )?;
    let dir = std::env::temp_dir().join("gradalign_beta_sweep");
    let result = run_sweep(&cfg, &dir)?;
    for e in &result.entries {
        println!(
            "β = {:<4} final acc {:?}, best acc {:?}, final grad_var {:?}",
            e.value, e.final_test_acc, e.best_test_acc, e.final_grad_var
        );
    }
    if let Some(best) = result.best() {
        println!("best β = {}", best.value);
    }
    print!("{}", std::fs::read_to_string(&result.summary_path)?);
    Ok(())
}
