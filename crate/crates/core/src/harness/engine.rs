use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::checkpoint::write_checkpoint;
use super::config::{DataSource, ExperimentConfig, ProblemConfig};
use crate::algorithms::run_round;
use crate::datagen::{gen_blobs, load_csv, partition, train_test_split, Dataset, MinibatchSchedule, Partition};
use crate::error::{Error, Result};
use crate::objectives::{Model, SupervisedClient};
use crate::paramspace::{ParamVector, SeededStream};
use crate::problem::FederatedProblem;
use crate::regularizer::r_value;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRUNCATED_FILE: &str = "metrics.truncated";
pub const CHECKPOINT_FILE: &str = "final.ckpt";

/// One evaluation point. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub comm_rounds_cum: usize,
    pub updates_cum: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// `2r(x)` over the clients that took part in this round.
    pub grad_var: f64,
    /// `‖∇f(x) − ∇f₁(x)‖` with `f` the mean over all clients.
    pub dev_client0: f64,
}

/// Data, clients and initial parameters built from a [`ProblemConfig`].
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub dataset: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub model: Model,
    pub problem: FederatedProblem,
    pub x0: ParamVector,
}

/// Dataset from the configured source, before splitting.
pub fn load_dataset(cfg: &ProblemConfig, root: &SeededStream) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Blobs { n_classes, per_class, input_dim, sep } => {
            gen_blobs(*n_classes, *per_class, *input_dim, *sep, &root.derive("data", 0))
        }
        DataSource::Csv { path } => load_csv(path),
    }
}

/// Split, partition the training part across clients and initialise the model.
pub fn build_problem(cfg: &ProblemConfig, master_seed: u64) -> Result<BuiltProblem> {
    let root = SeededStream::new(master_seed);
    let dataset = load_dataset(cfg, &root)?;
    let (train, test) = train_test_split(&dataset, cfg.test_fraction, &root.derive("split", 0))?;
    let part = partition(&train, cfg.n_clients, cfg.partition, &root.derive("partition", 0))?;
    let model = Model::new(&cfg.model, train.input_dim(), train.n_classes())?;
    let clients = part
        .assignment
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let (f, l) = train.select(idx);
            SupervisedClient::new(i, f, l, model.clone(), cfg.l2)
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = FederatedProblem::from_clients(clients)?;
    let x0 = model.init_params(&root.derive("init", 0));
    Ok(BuiltProblem { dataset, train, test, partition: part, model, problem, x0 })
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub final_params: ParamVector,
}

/// Clients taking part in round `r`, sorted.
pub fn sample_clients(root: &SeededStream, round: usize, n: usize, m: usize) -> Vec<usize> {
    if m == n {
        return (0..n).collect();
    }
    let mut idx = sample(&mut root.derive("round", round as u64).rng(), n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs `cfg.run.rounds` rounds and writes metrics and the final checkpoint into `out_dir`.
///
/// On divergence the metrics written so far are kept, a `metrics.truncated`
/// marker names the failing round, and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let built = build_problem(&cfg.problem, cfg.run.master_seed)?;
    run_built(cfg, &built, out_dir)
}

/// [`run_experiment`] on an already built problem.
pub fn run_built(cfg: &ExperimentConfig, built: &BuiltProblem, out_dir: &Path) -> Result<RunOutput> {
    cfg.algo.validate()?;
    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let truncated_path = out_dir.join(TRUNCATED_FILE);
    if truncated_path.exists() {
        fs::remove_file(&truncated_path)?;
    }
    let mut out = BufWriter::new(File::create(&metrics_path)?);

    let root = SeededStream::new(cfg.run.master_seed);
    let problem = &built.problem;
    let n = problem.n();
    let m = cfg.run.clients_per_round;
    if m == 0 || m > n {
        return Err(Error::config("run.clients_per_round", None, format!("must lie in 1..={n}")));
    }
    let mut schedules = (0..n)
        .map(|i| {
            MinibatchSchedule::new(i, problem.client(i).num_examples(), cfg.algo.batch_size, root.derive("minibatch", i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_client = cfg.algo.variant.steps_per_client(cfg.algo.local_steps);

    let mut x = built.x0.clone();
    let mut records = Vec::new();
    let (mut comm, mut updates) = (0usize, 0usize);
    for round in 1..=cfg.run.rounds {
        let picked = sample_clients(&root, round, n, m);
        let sub = problem.subset(&picked)?;
        let mut sub_sched: Vec<MinibatchSchedule> = picked.iter().map(|&i| schedules[i].clone()).collect();
        let result = run_round(&cfg.algo, &sub, &x, &mut sub_sched, &root.derive("order", round as u64));
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                out.flush()?;
                let e = e.in_round(round, cfg.algo.variant.name());
                fs::write(&truncated_path, format!("{{\"round\":{round},\"reason\":{}}}\n", serde_json::to_string(&e.to_string())?))?;
                return Err(e);
            }
        };
        for (&i, s) in picked.iter().zip(sub_sched) {
            schedules[i] = s;
        }
        x = result.server_params;
        comm += result.comm_rounds_used;
        updates += m * per_client;

        if round % cfg.run.eval_every == 0 || round == cfg.run.rounds {
            let rec = evaluate(built, &sub, &x, round, comm, updates)?;
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
            records.push(rec);
        }
    }
    out.flush()?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    write_checkpoint(&checkpoint_path, &x)?;
    Ok(RunOutput { metrics_path, checkpoint_path, records, final_params: x })
}

fn evaluate(
    built: &BuiltProblem,
    participating: &FederatedProblem,
    x: &ParamVector,
    round: usize,
    comm_rounds_cum: usize,
    updates_cum: usize,
) -> Result<MetricsRecord> {
    let (train_loss, train_acc) = built.model.evaluate(x, built.train.features(), built.train.labels())?;
    let (test_loss, test_acc) = built.model.evaluate(x, built.test.features(), built.test.labels())?;
    let grad_var = 2.0 * r_value(participating, x)?;
    let global = built.problem.mean_grad(x)?;
    let dev_client0 = global.dist(&built.problem.client(0).grad(x)?)?;
    Ok(MetricsRecord {
        round,
        comm_rounds_cum,
        updates_cum,
        train_loss,
        train_acc,
        test_loss,
        test_acc,
        grad_var,
        dev_client0,
    })
}

/// Parses a metrics file back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::run_gd_sequence;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse_str(text, ".").unwrap()
    }

    const SMALL: &str = "problem.n_classes = 3\nproblem.per_class = 20\nproblem.input_dim = 4\nproblem.n_clients = 3\n\
                         run.eval_every = 2\n";

    #[test]
    fn one_client_one_round_is_a_gd_step() {
        let c = cfg("problem.n_classes = 3\nproblem.per_class = 10\nproblem.input_dim = 2\nproblem.n_clients = 1\nalgo.variant = fedavg\nalgo.alpha = 0.2\nrun.rounds = 1\n");
        let dir = tempfile::tempdir().unwrap();
        let built = build_problem(&c.problem, 0).unwrap();
        let out = run_built(&c, &built, dir.path()).unwrap();
        let gd = run_gd_sequence(&built.problem, &built.x0, 0.2, 1).unwrap();
        assert!(out.final_params.bit_eq(&gd));
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn accounting_and_grad_var() {
        let dir = tempfile::tempdir().unwrap();
        for (variant, per_round) in [("fedavg", 1), ("fedga", 2), ("scaffold", 2), ("largebatch_gd", 1), ("gradalign", 2)] {
            let c = cfg(&format!("{SMALL}algo.alpha = 0.1\nalgo.variant = {variant}\nalgo.K = 3\nalgo.batch_size = 5\nrun.rounds = 6\nrun.clients_per_round = 2\n"));
            let out = run_experiment(&c, &dir.path().join(variant)).unwrap();
            let last = out.records.last().unwrap();
            assert_eq!(last.comm_rounds_cum, 6 * per_round, "{variant}");
            let k = c.algo.variant.steps_per_client(3);
            assert_eq!(last.updates_cum, 6 * 2 * k);
            assert!(out.records.windows(2).all(|w| w[0].comm_rounds_cum < w[1].comm_rounds_cum));
            assert!(out.records.iter().all(|r| r.grad_var >= 0.0 && (0.0..=1.0).contains(&r.test_acc)));
            assert_eq!(read_metrics(&out.metrics_path).unwrap(), out.records);
        }
    }

    #[test]
    fn grad_var_matches_regularizer_on_participants() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(&format!("{SMALL}algo.alpha = 0.1\nalgo.variant = fedavg\nrun.rounds = 2\nrun.clients_per_round = 2\n"));
        let built = build_problem(&c.problem, 0).unwrap();
        let out = run_built(&c, &built, dir.path()).unwrap();
        let picked = sample_clients(&SeededStream::new(0), 2, 3, 2);
        let sub = built.problem.subset(&picked).unwrap();
        let expect = 2.0 * r_value(&sub, &out.final_params).unwrap();
        assert!((out.records[0].grad_var - expect).abs() <= 1e-12);
    }

    #[test]
    fn divergence_keeps_partial_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(&format!("{SMALL}problem.model = mlp\nalgo.variant = fedavg\nalgo.alpha = 1e9\nrun.rounds = 20\n"));
        let err = run_experiment(&c, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        let msg = err.to_string();
        assert!(msg.contains("round") && msg.contains("fedavg"), "{msg}");
        assert!(dir.path().join(TRUNCATED_FILE).exists());
        assert!(dir.path().join(METRICS_FILE).exists());
    }
}
