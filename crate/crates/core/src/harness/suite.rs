use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{Sabotage, VerifyConfig};
use crate::datagen::{gen_blobs, partition, BatchSize, MinibatchSchedule, PartitionMode};
use crate::error::Result;
use crate::objectives::{make_quadratic_problem, Model, ModelSpec, QuadraticClient, SupervisedClient};
use crate::paramspace::{ParamVector, SeededStream};
use crate::problem::FederatedProblem;
use crate::verify::{
    coefficient_bridge_check, descent_condition_check, descent_rate_check, linear_scaled_check, perstep_equivalence_check,
    surrogate_gd_check, taylor_displaced_gradient_check, theorem1_residual, theorem2_residual, theorem4_joint_residual,
    theorem4_residual, theorem5_residual, DescentSettings, TheoremId, TheoremVerdict,
};

pub const VERDICTS_FILE: &str = "verdicts.jsonl";

/// β grid for the single-step MLP check at α = 0.1.
pub const MLP_BETAS: [f64; 4] = [0.05, 0.025, 0.0125, 0.00625];

/// β grid for the multi-step MLP check at α = 1e-4, small enough that the
/// O(α²β) part of the remainder stays below the O(αβ²) part.
pub const MLP_FEDGA_BETAS: [f64; 4] = [0.02, 0.01, 0.005, 0.0025];

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub verdicts: Vec<TheoremVerdict>,
    pub path: PathBuf,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TheoremVerdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }
}

/// The two-client 1-D problem `f₁ = x²`, `f₂ = 0`.
pub fn pair_fixture() -> FederatedProblem {
    FederatedProblem::from_clients(vec![
        QuadraticClient::scalar(0, 2.0, 0.0).expect("valid scalar client"),
        QuadraticClient::scalar(1, 0.0, 0.0).expect("valid scalar client"),
    ])
    .expect("non-empty problem")
}

/// Supervised clients on Gaussian blobs, one label shard each when possible.
pub fn blob_problem(
    n_clients: usize,
    n_classes: usize,
    per_class: usize,
    input_dim: usize,
    spec: &ModelSpec,
    seed: u64,
) -> Result<(FederatedProblem, ParamVector)> {
    let root = SeededStream::new(seed);
    let ds = gen_blobs(n_classes, per_class, input_dim, 2.0, &root.derive("data", 0))?;
    let mode = if n_clients >= n_classes {
        PartitionMode::LabelShard { classes_per_client: 1 }
    } else {
        PartitionMode::Iid
    };
    let part = partition(&ds, n_clients, mode, &root.derive("partition", 0))?;
    let model = Model::new(spec, input_dim, n_classes)?;
    let clients = part
        .assignment
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let (f, l) = ds.select(idx);
            SupervisedClient::new(i, f, l, model.clone(), 1e-3)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((FederatedProblem::from_clients(clients)?, model.init_params(&root.derive("init", 0))))
}

fn labelled(label: &str, r: Result<TheoremVerdict>, id: TheoremId) -> TheoremVerdict {
    let mut v = r.unwrap_or_else(|e| TheoremVerdict::from_error(id, &e));
    v.notes = format!("[{label}] {}", v.notes);
    v
}

fn quadratic(n: usize, d: usize, spread: f64, seed: u64) -> Result<FederatedProblem> {
    FederatedProblem::from_clients(make_quadratic_problem(n, d, spread, &SeededStream::new(seed))?)
}

/// Descent and rate verdicts for 100 steps; `alpha = None` takes 90% of the admissible limit.
fn descent_pair(
    label: &str,
    problem: &FederatedProblem,
    x0: &ParamVector,
    alpha: Option<f64>,
    seed: u64,
    out: &mut Vec<TheoremVerdict>,
) {
    let run = || -> Result<_> {
        let mut s = DescentSettings::estimate(problem, x0, 0.0, 1.0, 100, 1.0, &SeededStream::new(seed))?;
        s.alpha = alpha.unwrap_or(0.9 / (2.0 * s.smoothness.l1 * s.safety));
        descent_condition_check(problem, x0, &s)
    };
    match run() {
        Ok((trace, v)) => {
            out.push(labelled(&format!("{label} descent"), Ok(v), TheoremId::Thm3));
            out.push(labelled(&format!("{label} rate"), Ok(descent_rate_check(&trace)), TheoremId::Thm3));
        }
        Err(e) => {
            out.push(labelled(&format!("{label} descent"), Err(e), TheoremId::Thm3));
        }
    }
}

/// Every check on the built-in fixtures, plus `cfg.quadratic_problems`
/// random quadratic problems. Verdicts are returned in a fixed order.
pub fn run_checks(cfg: &VerifyConfig) -> Result<Vec<TheoremVerdict>> {
    let coefficient = match cfg.sabotage {
        Sabotage::None => 1.0,
        Sabotage::Thm1Coefficient => 2.0,
    };
    let pair = pair_fixture();
    let one = ParamVector::new(vec![1.0])?;
    let quad = quadratic(3, 2, 0.8, 17)?;
    let qx = ParamVector::new(vec![1.0, -1.0])?;
    let (mlp, mx) = blob_problem(3, 3, 6, 3, &ModelSpec::default_mlp(), 8)?;
    let (logi2, lx2) = blob_problem(2, 2, 20, 3, &ModelSpec::Logistic, 12)?;
    let (logi10, lx10) = blob_problem(10, 4, 50, 5, &ModelSpec::Logistic, 21)?;
    let dir = {
        let mut rng = SeededStream::new(9).rng();
        ParamVector::new((0..mlp.dim()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())?
    };
    let qdir = ParamVector::new(vec![1.0, 0.5])?;
    let scales = [1e-1, 5e-2, 2.5e-2];
    let alphas = [1e-2, 5e-3, 2.5e-3, 1.25e-3];

    let mut v = vec![
        labelled("quadratic", taylor_displaced_gradient_check(quad.client(0).as_ref(), &qx, &qdir, &scales), TheoremId::Lemma1),
        labelled("mlp", taylor_displaced_gradient_check(mlp.client(0).as_ref(), &mx, &dir, &scales), TheoremId::Lemma1),
        labelled("1-D pair, K=2", theorem1_residual(&pair, &one, &scales, coefficient), TheoremId::Thm1),
        labelled("quadratic n=3, K=3", theorem1_residual(&quad, &qx, &alphas[..3], coefficient), TheoremId::Thm1),
        labelled("quadratic", theorem2_residual(&quad, &qx, 0.1, &scales), TheoremId::Thm2),
        labelled("mlp", theorem2_residual(&mlp, &mx, 0.1, &MLP_BETAS), TheoremId::Thm2),
    ];
    descent_pair("1-D pair", &pair, &one, Some(0.1), 3, &mut v);
    descent_pair("logistic 2-class", &logi2, &lx2, None, 4, &mut v);
    v.extend([
        labelled("mlp", theorem4_residual(&mlp, &mx, 1e-4, 3, &MLP_FEDGA_BETAS, None), TheoremId::Thm4),
        labelled("quadratic", theorem4_joint_residual(&quad, &qx, 4, &alphas[..3], None), TheoremId::Thm4),
        labelled("quadratic K=1", theorem5_residual(&quad, &qx, 1, &scales, None), TheoremId::Thm5),
        labelled("quadratic K=3", theorem5_residual(&quad, &qx, 3, &alphas, None), TheoremId::Thm5),
        labelled("quadratic K=3 bridge", coefficient_bridge_check(&quad, &qx, 3, &alphas[..3], None), TheoremId::Thm5),
        labelled("quadratic n=3", linear_scaled_check(&quad, &qx, &alphas[..3]), TheoremId::AppB),
        labelled("1-D pair, K=2", surrogate_gd_check(&pair, &one, 2, &[0.1, 0.05, 0.025, 0.0125]), TheoremId::AppD3),
    ]);
    let schedules = (0..logi10.n())
        .map(|i| {
            MinibatchSchedule::new(
                i,
                logi10.client(i).num_examples(),
                BatchSize::Fixed(8),
                SeededStream::new(5).derive("minibatch", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    v.push(labelled(
        "logistic 10 clients, 50 rounds",
        perstep_equivalence_check(&logi10, &lx10, 0.1, 0.5, 5, 50, schedules),
        TheoremId::AppE,
    ));

    let extra = SeededStream::new(cfg.seed);
    for k in 0..cfg.quadratic_problems {
        let n = 2 + k % 3;
        let d = 2 + k % 4;
        let p = quadratic(n, d, 0.6, extra.derive("quadratic", k as u64).master_seed() ^ k as u64)?;
        let x: Vec<f64> = (0..d).map(|j| 1.0 - 0.5 * j as f64).collect();
        let x = ParamVector::new(x)?;
        let label = format!("configured quadratic {k} (n={n}, d={d})");
        v.push(labelled(&label, theorem1_residual(&p, &x, &alphas[..3], coefficient), TheoremId::Thm1));
        v.push(labelled(&label, theorem2_residual(&p, &x, 0.1, &scales), TheoremId::Thm2));
        v.push(labelled(&label, theorem5_residual(&p, &x, 2, &alphas, None), TheoremId::Thm5));
    }
    Ok(v)
}

/// Runs [`run_checks`] and writes one JSON verdict per line to `out_dir/verdicts.jsonl`.
pub fn verify_suite(cfg: &VerifyConfig, out_dir: &Path) -> Result<SuiteReport> {
    let verdicts = run_checks(cfg)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(VERDICTS_FILE);
    let mut f = fs::File::create(&path)?;
    for v in &verdicts {
        writeln!(f, "{}", v.to_json_line())?;
    }
    Ok(SuiteReport { verdicts, path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixtures_pass_and_cover_every_id() {
        let dir = tempfile::tempdir().unwrap();
        let report = verify_suite(&VerifyConfig::default(), dir.path()).unwrap();
        for v in report.failures() {
            eprintln!("{}", v.to_json_line());
        }
        assert!(report.all_passed());
        assert!(report.verdicts.len() >= 9);
        for id in TheoremId::ALL {
            assert!(report.verdicts.iter().any(|v| v.theorem_id == id), "{id} missing");
        }
        let lines = fs::read_to_string(&report.path).unwrap().lines().count();
        assert_eq!(lines, report.verdicts.len());
    }

    #[test]
    fn sabotaged_coefficient_fails_thm1() {
        let cfg = VerifyConfig { sabotage: Sabotage::Thm1Coefficient, ..VerifyConfig::default() };
        let v = run_checks(&cfg).unwrap();
        assert!(v.iter().filter(|v| v.theorem_id == TheoremId::Thm1).all(|v| !v.passed));
        assert!(v.iter().filter(|v| v.theorem_id != TheoremId::Thm1).all(|v| v.passed));
    }

    #[test]
    fn configured_quadratics_are_checked() {
        let cfg = VerifyConfig { quadratic_problems: 3, seed: 4, ..VerifyConfig::default() };
        let v = run_checks(&cfg).unwrap();
        let base = run_checks(&VerifyConfig::default()).unwrap().len();
        assert_eq!(v.len(), base + 9);
        assert!(v.iter().all(|v| v.passed), "{:?}", v.iter().filter(|v| !v.passed).collect::<Vec<_>>());
    }
}
