use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepParam};
use super::engine::{build_problem, run_built};
use crate::error::{Error, Result};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub final_test_acc: Option<f64>,
    pub best_test_acc: Option<f64>,
    pub final_grad_var: Option<f64>,
    pub metrics_path: PathBuf,
    /// Set when the run for this value failed; the sweep continues regardless.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub entries: Vec<SweepEntry>,
    pub summary_path: PathBuf,
}

impl SweepResult {
    /// Entry with the highest final test accuracy; ties keep the earlier value.
    pub fn best(&self) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .filter(|e| e.final_test_acc.is_some())
            .fold(None, |best: Option<&SweepEntry>, e| match best {
                Some(b) if b.final_test_acc >= e.final_test_acc => Some(b),
                _ => Some(e),
            })
    }
}

/// One run per sweep value, all from the same master seed, each in
/// `out_dir/<param>_<index>`, followed by a CSV summary.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SweepResult> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep.values", None, "the sweep command needs sweep.values"))?;
    if spec.values.len() < 2 {
        return Err(Error::config("sweep.values", None, "a sweep needs at least two values"));
    }
    let built = build_problem(&cfg.problem, cfg.run.master_seed)?;
    let entries: Vec<SweepEntry> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut run_cfg = cfg.clone();
            match spec.param {
                SweepParam::Beta => run_cfg.algo.beta = value,
                SweepParam::Mu => run_cfg.algo.mu = value,
            }
            let dir = out_dir.join(format!("{}_{i}", spec.param.name()));
            match run_built(&run_cfg, &built, &dir) {
                Ok(out) => SweepEntry {
                    value,
                    final_test_acc: out.records.last().map(|r| r.test_acc),
                    best_test_acc: out.records.iter().map(|r| r.test_acc).reduce(f64::max),
                    final_grad_var: out.records.last().map(|r| r.grad_var),
                    metrics_path: out.metrics_path,
                    error: None,
                },
                Err(e) => SweepEntry {
                    value,
                    final_test_acc: None,
                    best_test_acc: None,
                    final_grad_var: None,
                    metrics_path: dir.join(super::engine::METRICS_FILE),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    std::fs::create_dir_all(out_dir)?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_writer(File::create(&summary_path)?);
    w.write_record([spec.param.name(), "final_test_acc", "best_test_acc", "final_grad_var", "metrics_path", "error"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for e in &entries {
        w.write_record([
            e.value.to_string(),
            opt(e.final_test_acc),
            opt(e.best_test_acc),
            opt(e.final_grad_var),
            e.metrics_path.display().to_string(),
            e.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(SweepResult { param: spec.param, entries, summary_path })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const BASE: &str = "problem.n_classes = 3\nproblem.per_class = 20\nproblem.input_dim = 4\nproblem.n_clients = 3\n\
                        problem.partition = label_shard\nalgo.alpha = 0.1\nalgo.K = 2\nalgo.batch_size = 4\nrun.rounds = 4\nrun.eval_every = 1\n";

    #[test]
    fn beta_zero_reproduces_fedavg() {
        let dir = tempfile::tempdir().unwrap();
        let ga = ExperimentConfig::parse_str(&format!("{BASE}algo.variant = fedga\nsweep.values = 0, 0.1\n"), ".").unwrap();
        let res = run_sweep(&ga, dir.path()).unwrap();
        let avg = ExperimentConfig::parse_str(&format!("{BASE}algo.variant = fedavg\n"), ".").unwrap();
        let out = super::super::engine::run_experiment(&avg, &dir.path().join("avg")).unwrap();
        let sweep_recs = super::super::engine::read_metrics(&res.entries[0].metrics_path).unwrap();
        for (a, b) in sweep_recs.iter().zip(&out.records) {
            // identical trajectories; only the communication count differs
            assert_eq!((a.train_loss, a.test_acc, a.grad_var), (b.train_loss, b.test_acc, b.grad_var));
            assert_eq!(a.comm_rounds_cum, 2 * b.comm_rounds_cum);
        }
        assert!(fs::read_to_string(&res.summary_path).unwrap().lines().count() == 3);
    }

    #[test]
    fn divergent_values_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse_str(&format!("{BASE}algo.variant = fedga\nsweep.values = 0.1, 1e12\n"), ".").unwrap();
        let res = run_sweep(&cfg, dir.path()).unwrap();
        assert!(res.entries[0].error.is_none());
        assert!(res.entries[1].error.as_deref().unwrap().contains("divergence"));
        assert_eq!(res.best().unwrap().value, 0.1);
    }
}
