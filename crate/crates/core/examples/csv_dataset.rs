//! Generate a dataset to CSV, then train on it from a config that points at the file.

use gradalign::datagen::{gen_blobs, load_csv, save_csv};
use gradalign::harness::{run_experiment, ExperimentConfig};
use gradalign::paramspace::SeededStream;

fn main() -> gradalign::Result<()> {
    let dir = std::env::temp_dir().join("gradalign_csv");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("blobs.csv");
    save_csv(&gen_blobs(3, 40, 2, 3.0, &SeededStream::new(11))?, &path)?;
    let back = load_csv(&path)?;
    println!("{} rows, {} features, classes {:?}", back.len(), back.input_dim(), back.class_counts());

    let cfg = ExperimentConfig::parse_str(
        "problem.source = csv\nproblem.csv_path = blobs.csv\nproblem.n_clients = 3\nproblem.partition = label_shard\n\
         algo.variant = scaffold\nalgo.alpha = 0.1\nalgo.K = 4\nrun.rounds = 20\nrun.eval_every = 5\n",
        &dir,
    )?;
    let out = run_experiment(&cfg, &dir.join("run"))?;
    let last = out.records.last().expect("final round is always evaluated");
    println!("scaffold on CSV data: test acc {:.4} after {} rounds", last.test_acc, last.round);
    Ok(())
}
