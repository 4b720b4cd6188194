//! Flat `key = value` experiment configuration.
//!
//! Lines hold one assignment each; `#` starts a comment. Keys and defaults:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `problem.source` | `blobs` | `blobs` or `csv` |
//! | `problem.csv_path` | none | required when `source = csv`; relative to the config file |
//! | `problem.n_classes` | `10` | blob classes |
//! | `problem.per_class` | `200` | blob examples per class |
//! | `problem.input_dim` | `20` | blob feature dimension |
//! | `problem.sep` | `4.0` | distance between the closest blob means |
//! | `problem.n_clients` | required | number of clients |
//! | `problem.partition` | `iid` | `iid` or `label_shard` |
//! | `problem.classes_per_client` | `1` | shards per client for `label_shard` |
//! | `problem.model` | `logistic` | `logistic` or `mlp` |
//! | `problem.hidden` | `16` | comma-separated MLP hidden widths |
//! | `problem.l2` | `0.0` | weight decay inside every client loss |
//! | `problem.test_fraction` | `0.2` | stratified held-out share |
//! | `algo.variant` | required | e.g. `fedavg`, `fedga`, `scaffold` |
//! | `algo.alpha` | required | step size |
//! | `algo.beta` | `0.0` | displacement size |
//! | `algo.K` | `1` | local steps |
//! | `algo.batch_size` | `full` | `full` or a positive integer |
//! | `algo.mu` | `0.0` | proximal weight |
//! | `run.rounds` | required | optimization rounds |
//! | `run.clients_per_round` | `n_clients` | clients sampled per round |
//! | `run.eval_every` | `10` | metrics cadence (the last round is always recorded) |
//! | `run.master_seed` | `0` | root of every random stream |
//! | `run.out_dir` | `out` | output directory |
//! | `sweep.param` | `beta` | `beta` or `mu` |
//! | `sweep.values` | none | comma-separated values, at least two |
//! | `verify.sabotage` | `none` | `none` or `thm1_coefficient` |
//! | `verify.quadratic_problems` | `0` | extra random quadratic problems to check |
//! | `verify.seed` | `0` | seed for the extra problems |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoConfig, Variant};
use crate::datagen::{BatchSize, PartitionMode};
use crate::error::{Error, Result};
use crate::objectives::{Activation, ModelSpec};

const KNOWN_KEYS: &[&str] = &[
    "problem.source",
    "problem.csv_path",
    "problem.n_classes",
    "problem.per_class",
    "problem.input_dim",
    "problem.sep",
    "problem.n_clients",
    "problem.partition",
    "problem.classes_per_client",
    "problem.model",
    "problem.hidden",
    "problem.l2",
    "problem.test_fraction",
    "algo.variant",
    "algo.alpha",
    "algo.beta",
    "algo.K",
    "algo.batch_size",
    "algo.mu",
    "run.rounds",
    "run.clients_per_round",
    "run.eval_every",
    "run.master_seed",
    "run.out_dir",
    "sweep.param",
    "sweep.values",
    "verify.sabotage",
    "verify.quadratic_problems",
    "verify.seed",
];

/// Syntactically valid assignments with their line numbers.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, found `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(key, Some(line), "unknown key"));
            }
            if value.is_empty() {
                return Err(Error::config(key, Some(line), "missing value"));
            }
            if let Some((_, first)) = entries.insert(key.to_string(), (value.to_string(), line)) {
                return Err(Error::config(key, Some(line), format!("duplicate key, first set at line {first}")));
            }
        }
        Ok(RawConfig { entries, base_dir: base_dir.into() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("", None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn get<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(key, Some(line), format!("expected {what}, found `{v}`"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, what: &str, default: T) -> Result<T> {
        Ok(self.get(key, what)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.get(key, what)?.ok_or_else(|| Error::config(key, None, "required key is missing"))
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.raw(key).map(|r| r.1)
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        let Some((v, line)) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse().map_err(|_| Error::config(key, Some(line), format!("expected a list of {what}, found `{s}`")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs { n_classes: usize, per_class: usize, input_dim: usize, sep: f64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub source: DataSource,
    pub n_clients: usize,
    pub partition: PartitionMode,
    pub model: ModelSpec,
    pub l2: f64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub eval_every: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    Mu,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Mu => "mu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sabotage {
    None,
    /// Doubles the predicted coefficient of the ordering drift.
    Thm1Coefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub sabotage: Sabotage,
    pub quadratic_problems: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { sabotage: Sabotage::None, quadratic_problems: 0, seed: 0 }
    }
}

impl VerifyConfig {
    /// Reads only the `verify.` keys; other known keys are ignored.
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let sabotage = match raw.raw("verify.sabotage") {
            None | Some(("none", _)) => Sabotage::None,
            Some(("thm1_coefficient", _)) => Sabotage::Thm1Coefficient,
            Some((v, line)) => {
                return Err(Error::config("verify.sabotage", Some(line), format!("expected none or thm1_coefficient, found `{v}`")))
            }
        };
        Ok(VerifyConfig {
            sabotage,
            quadratic_problems: raw.get_or("verify.quadratic_problems", "an integer", 0)?,
            seed: raw.get_or("verify.seed", "an integer", 0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algo: AlgoConfig,
    pub run: RunConfig,
    pub sweep: Option<SweepSpec>,
    pub verify: VerifyConfig,
    /// Accepted but suspicious settings.
    pub warnings: Vec<String>,
}

/// Reads and validates an experiment configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    ExperimentConfig::from_raw(&RawConfig::load(path)?)
}

impl ExperimentConfig {
    pub fn parse_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        Self::from_raw(&RawConfig::parse_str(text, base_dir)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let problem = problem_from_raw(raw)?;
        let (algo, mut warnings) = algo_from_raw(raw)?;
        let run = run_from_raw(raw, problem.n_clients)?;
        let sweep = sweep_from_raw(raw)?;
        if let Some(s) = &sweep {
            if s.param == SweepParam::Beta && !algo.variant.uses_beta() {
                warnings.push(format!("sweeping beta has no effect on {}", algo.variant));
            }
            if s.param == SweepParam::Mu && algo.variant != Variant::Fedprox {
                warnings.push(format!("sweeping mu has no effect on {}", algo.variant));
            }
        }
        Ok(ExperimentConfig { problem, algo, run, sweep, verify: VerifyConfig::from_raw(raw)?, warnings })
    }
}

impl ProblemConfig {
    /// Reads only the `problem.` keys.
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        problem_from_raw(raw)
    }
}

impl RawConfig {
    /// `run.master_seed`, defaulting to 0.
    pub fn master_seed(&self) -> Result<u64> {
        self.get_or("run.master_seed", "an unsigned integer", 0)
    }
}

fn problem_from_raw(raw: &RawConfig) -> Result<ProblemConfig> {
    let source = match raw.raw("problem.source").map(|r| r.0).unwrap_or("blobs") {
        "blobs" => DataSource::Blobs {
            n_classes: raw.get_or("problem.n_classes", "an integer", 10)?,
            per_class: raw.get_or("problem.per_class", "an integer", 200)?,
            input_dim: raw.get_or("problem.input_dim", "an integer", 20)?,
            sep: raw.get_or("problem.sep", "a number", 4.0)?,
        },
        "csv" => {
            let p: String = raw.require("problem.csv_path", "a path")?;
            let path = raw.base_dir.join(p);
            if !path.is_file() {
                return Err(Error::config(
                    "problem.csv_path",
                    raw.line("problem.csv_path"),
                    format!("file {} does not exist", path.display()),
                ));
            }
            DataSource::Csv { path }
        }
        other => {
            return Err(Error::config("problem.source", raw.line("problem.source"), format!("expected blobs or csv, found `{other}`")))
        }
    };
    let n_clients: usize = raw.require("problem.n_clients", "an integer")?;
    if n_clients == 0 {
        return Err(Error::config("problem.n_clients", raw.line("problem.n_clients"), "must be at least 1"));
    }
    let partition = match raw.raw("problem.partition").map(|r| r.0).unwrap_or("iid") {
        "iid" => PartitionMode::Iid,
        "label_shard" => PartitionMode::LabelShard {
            classes_per_client: raw.get_or("problem.classes_per_client", "an integer", 1)?,
        },
        other => {
            return Err(Error::config(
                "problem.partition",
                raw.line("problem.partition"),
                format!("expected iid or label_shard, found `{other}`"),
            ))
        }
    };
    let model = match raw.raw("problem.model").map(|r| r.0).unwrap_or("logistic") {
        "logistic" => ModelSpec::Logistic,
        "mlp" => ModelSpec::Mlp {
            hidden: raw.list("problem.hidden", "integers")?.unwrap_or_else(|| vec![16]),
            activation: Activation::Tanh,
        },
        other => {
            return Err(Error::config("problem.model", raw.line("problem.model"), format!("expected logistic or mlp, found `{other}`")))
        }
    };
    let l2: f64 = raw.get_or("problem.l2", "a number", 0.0)?;
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::config("problem.l2", raw.line("problem.l2"), "must be non-negative"));
    }
    let test_fraction: f64 = raw.get_or("problem.test_fraction", "a number", 0.2)?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("problem.test_fraction", raw.line("problem.test_fraction"), "must lie strictly between 0 and 1"));
    }
    Ok(ProblemConfig { source, n_clients, partition, model, l2, test_fraction })
}

fn algo_from_raw(raw: &RawConfig) -> Result<(AlgoConfig, Vec<String>)> {
    let variant: String = raw.require("algo.variant", "a variant name")?;
    let variant = Variant::from_str(&variant)
        .map_err(|e| Error::config("algo.variant", raw.line("algo.variant"), e.to_string()))?;
    let batch = match raw.raw("algo.batch_size") {
        None | Some(("full", _)) => BatchSize::Full,
        Some((v, line)) => match v.parse::<usize>() {
            Ok(b) if b > 0 => BatchSize::Fixed(b),
            _ => return Err(Error::config("algo.batch_size", Some(line), format!("expected full or a positive integer, found `{v}`"))),
        },
    };
    let cfg = AlgoConfig::new(variant, raw.require("algo.alpha", "a number")?)
        .with_beta(raw.get_or("algo.beta", "a number", 0.0)?)
        .with_local_steps(raw.get_or("algo.K", "an integer", 1)?)
        .with_batch(batch)
        .with_mu(raw.get_or("algo.mu", "a number", 0.0)?);
    let warnings = cfg.validate().map_err(|e| match e {
        Error::Config { key, msg, .. } => {
            let line = raw.line(&key);
            Error::Config { key, line, msg }
        }
        other => other,
    })?;
    let mut warnings = warnings;
    if raw.contains("algo.beta") && !variant.uses_beta() && !warnings.iter().any(|w| w.starts_with("algo.beta")) {
        warnings.push(format!("algo.beta is ignored by {variant}"));
    }
    Ok((cfg, warnings))
}

fn run_from_raw(raw: &RawConfig, n_clients: usize) -> Result<RunConfig> {
    let rounds: usize = raw.require("run.rounds", "an integer")?;
    if rounds == 0 {
        return Err(Error::config("run.rounds", raw.line("run.rounds"), "must be at least 1"));
    }
    let m: usize = raw.get_or("run.clients_per_round", "an integer", n_clients)?;
    if m == 0 || m > n_clients {
        return Err(Error::config(
            "run.clients_per_round",
            raw.line("run.clients_per_round"),
            format!("must lie in 1..={n_clients}"),
        ));
    }
    let eval_every: usize = raw.get_or("run.eval_every", "an integer", 10)?;
    if eval_every == 0 {
        return Err(Error::config("run.eval_every", raw.line("run.eval_every"), "must be at least 1"));
    }
    Ok(RunConfig {
        rounds,
        clients_per_round: m,
        eval_every,
        master_seed: raw.get_or("run.master_seed", "an unsigned integer", 0)?,
        out_dir: PathBuf::from(raw.get_or("run.out_dir", "a path", "out".to_string())?),
    })
}

fn sweep_from_raw(raw: &RawConfig) -> Result<Option<SweepSpec>> {
    let param = match raw.raw("sweep.param") {
        None | Some(("beta", _)) => SweepParam::Beta,
        Some(("mu", _)) => SweepParam::Mu,
        Some((v, line)) => return Err(Error::config("sweep.param", Some(line), format!("expected beta or mu, found `{v}`"))),
    };
    let Some(values) = raw.list::<f64>("sweep.values", "numbers")? else {
        if raw.contains("sweep.param") {
            return Err(Error::config("sweep.values", None, "sweep.param is set but no values are given"));
        }
        return Ok(None);
    };
    let line = raw.line("sweep.values");
    if values.len() < 2 {
        return Err(Error::config("sweep.values", line, "a sweep needs at least two values"));
    }
    if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::config("sweep.values", line, "values must be non-negative and finite"));
    }
    Ok(Some(SweepSpec { param, values }))
}
