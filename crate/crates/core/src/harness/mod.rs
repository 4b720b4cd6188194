//! Experiment engine: configuration, multi-round runs with client sampling,
//! metrics, sweeps, checkpoints and the verification suite.

mod checkpoint;
mod config;
mod engine;
mod suite;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use config::{
    parse_config, DataSource, ExperimentConfig, ProblemConfig, RawConfig, RunConfig, Sabotage, SweepParam, SweepSpec,
    VerifyConfig,
};
pub use engine::{
    build_problem, load_dataset, read_metrics, run_built, run_experiment, sample_clients, BuiltProblem, MetricsRecord,
    RunOutput, CHECKPOINT_FILE, METRICS_FILE, TRUNCATED_FILE,
};
pub use suite::{
    blob_problem, pair_fixture, run_checks, verify_suite, SuiteReport, MLP_BETAS, MLP_FEDGA_BETAS, VERDICTS_FILE,
};
pub use sweep::{run_sweep, SweepEntry, SweepResult, SUMMARY_FILE};

use crate::datagen::save_csv;
use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::usage("--threads must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::usage(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Files written by [`gen_data`].
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub partition: PathBuf,
}

/// Writes the configured dataset, its split and the client partition.
///
/// The partition file is a JSON array holding each client's row indices into `train.csv`.
pub fn gen_data(cfg: &ProblemConfig, master_seed: u64, out_dir: &Path) -> Result<GeneratedData> {
    let built = build_problem(cfg, master_seed)?;
    fs::create_dir_all(out_dir)?;
    let files = GeneratedData {
        dataset: out_dir.join("data.csv"),
        train: out_dir.join("train.csv"),
        test: out_dir.join("test.csv"),
        partition: out_dir.join("partition.json"),
    };
    save_csv(&built.dataset, &files.dataset)?;
    save_csv(&built.train, &files.train)?;
    save_csv(&built.test, &files.test)?;
    fs::write(&files.partition, serde_json::to_string(&built.partition.assignment)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::load_csv;

    #[test]
    fn generated_data_reloads() {
        let cfg = ExperimentConfig::parse_str(
            "problem.n_classes = 3\nproblem.per_class = 10\nproblem.input_dim = 2\nproblem.n_clients = 3\nalgo.variant = fedavg\nalgo.alpha = 0.1\nrun.rounds = 1\n",
            ".",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = gen_data(&cfg.problem, 7, dir.path()).unwrap();
        let built = build_problem(&cfg.problem, 7).unwrap();
        assert_eq!(load_csv(&files.train).unwrap(), built.train);
        let part: Vec<Vec<usize>> = serde_json::from_str(&fs::read_to_string(&files.partition).unwrap()).unwrap();
        assert_eq!(part, built.partition.assignment);
    }

    #[test]
    fn thread_counts_do_not_change_results() {
        let cfg = ExperimentConfig::parse_str(
            "problem.n_classes = 4\nproblem.per_class = 20\nproblem.input_dim = 3\nproblem.n_clients = 4\nproblem.model = mlp\n\
             algo.variant = fedga\nalgo.alpha = 0.1\nalgo.beta = 0.2\nalgo.K = 3\nalgo.batch_size = 5\nrun.rounds = 5\nrun.eval_every = 1\n",
            ".",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = with_threads(Some(1), || run_experiment(&cfg, &dir.path().join("a"))).unwrap().unwrap();
        let b = with_threads(Some(4), || run_experiment(&cfg, &dir.path().join("b"))).unwrap().unwrap();
        assert_eq!(fs::read(a.metrics_path).unwrap(), fs::read(b.metrics_path).unwrap());
        assert!(with_threads(Some(0), || ()).is_err());
    }
}
