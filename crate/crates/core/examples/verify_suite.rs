//! Run the full battery of numerical checks and print one line per verdict.

use gradalign::harness::{verify_suite, VerifyConfig};

fn main() -> gradalign::Result<()> {
    let cfg = VerifyConfig { quadratic_problems: 2, ..VerifyConfig::default() };
    let report = verify_suite(&cfg, &std::env::temp_dir().join("gradalign_verify"))?;
    for v in &report.verdicts {
        let order = v.fitted_slope.map_or("exact".to_string(), |s| format!("{s:.3}"));
        println!("{} {:<6} {order:>6}  {}", if v.passed { "PASS" } else { "FAIL" }, v.theorem_id, v.notes);
    }
    println!("{} of {} passed; verdicts in {}", report.verdicts.len() - report.failures().count(), report.verdicts.len(), report.path.display());
    Ok(())
}
