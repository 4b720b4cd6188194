//! The final parameters of a run are written as a checkpoint; reading it back
//! gives the identical vector.

use gradalign::harness::{read_checkpoint, read_metrics, run_experiment, ExperimentConfig};

fn main() -> gradalign::Result<()> {
    let cfg = ExperimentConfig::parse_str(
        "problem.n_classes = 3\nproblem.per_class = 30\nproblem.input_dim = 4\nproblem.n_clients = 3\n\
         algo.variant = fedprox\nalgo.mu = 0.1\nalgo.alpha = 0.1\nalgo.K = 3\nrun.rounds = 10\nrun.eval_every = 2\n",
        ".",
    )?;
    let out = run_experiment(&cfg, &std::env::temp_dir().join("gradalign_checkpoint"))?;
    let restored = read_checkpoint(&out.checkpoint_path)?;
    println!("{} parameters, bit-identical after reload: {}", restored.len(), restored.bit_eq(&out.final_params));
    for r in read_metrics(&out.metrics_path)? {
        println!("round {:>2}: test acc {:.4}, dev of client 0 {:.3e}", r.round, r.test_acc, r.dev_client0);
    }
    Ok(())
}
