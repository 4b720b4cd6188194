use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gradalign::harness::{
    gen_data, parse_config, run_experiment, run_sweep, verify_suite, with_threads, ExperimentConfig, ProblemConfig,
    RawConfig, VerifyConfig,
};
use gradalign::{Error, Result};

#[derive(Parser)]
#[command(name = "gradalign", version, about = "Federated gradient-alignment simulator and verification suite")]
struct Cli {
    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to run.out_dir, or `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-client work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress and warnings.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.jsonl and final.ckpt.
    Run { config: PathBuf },
    /// Run one experiment per sweep value and write summary.csv.
    Sweep { config: PathBuf },
    /// Run every numerical check and write verdicts.jsonl.
    Verify { config: Option<PathBuf> },
    /// Write the configured dataset, its split and the client partition as files.
    GenData { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.threads, || dispatch(&cli)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn experiment(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.master_seed = seed;
    }
    if !cli.quiet {
        for w in &cfg.warnings {
            eprintln!("warning: {w}");
        }
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.run.out_dir.clone());
    Ok((cfg, out))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let (cfg, out) = experiment(cli, config)?;
            let res = run_experiment(&cfg, &out)?;
            if !cli.quiet {
                if let Some(last) = res.records.last() {
                    println!(
                        "{} rounds, {} communication rounds, test accuracy {:.4}, grad_var {:.6e}",
                        last.round, last.comm_rounds_cum, last.test_acc, last.grad_var
                    );
                }
                println!("metrics: {}", res.metrics_path.display());
            }
            Ok(())
        }
        Command::Sweep { config } => {
            let (cfg, out) = experiment(cli, config)?;
            let res = run_sweep(&cfg, &out)?;
            if !cli.quiet {
                for e in &res.entries {
                    match (&e.error, e.final_test_acc) {
                        (Some(err), _) => println!("{} = {:<8} failed: {err}", res.param.name(), e.value),
                        (None, Some(acc)) => println!("{} = {:<8} final test accuracy {acc:.4}", res.param.name(), e.value),
                        (None, None) => println!("{} = {:<8} no evaluations", res.param.name(), e.value),
                    }
                }
                println!("summary: {}", res.summary_path.display());
            }
            Ok(())
        }
        Command::Verify { config } => {
            let mut vcfg = match config {
                Some(p) => VerifyConfig::from_raw(&RawConfig::load(p)?)?,
                None => VerifyConfig::default(),
            };
            if let Some(seed) = cli.seed {
                vcfg.seed = seed;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let report = verify_suite(&vcfg, &out)?;
            if !cli.quiet {
                for v in &report.verdicts {
                    println!("{} {:<6} {}", if v.passed { "PASS" } else { "FAIL" }, v.theorem_id, v.notes);
                }
                println!("verdicts: {}", report.path.display());
            }
            let failed = report.failures().count();
            if failed > 0 {
                return Err(Error::Verification(format!("{failed} of {} checks failed", report.verdicts.len())));
            }
            Ok(())
        }
        Command::GenData { config } => {
            let raw = RawConfig::load(config)?;
            let problem = ProblemConfig::from_raw(&raw)?;
            let seed = cli.seed.map_or_else(|| raw.master_seed(), Ok)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let files = gen_data(&problem, seed, &out)?;
            if !cli.quiet {
                println!("wrote {}, {}, {}, {}", files.dataset.display(), files.train.display(), files.test.display(), files.partition.display());
            }
            Ok(())
        }
    }
}
