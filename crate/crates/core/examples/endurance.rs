//! A week of unattended operation with evaporation cycles and one injected
//! software crash, against a reference run without either.

use qkdlink::harness::{run_experiment, Experiment, ExperimentConfig, RunOptions};

fn main() -> qkdlink::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.endurance.duration_h = 168.0;
    cfg.endurance.faults.software_crash_h = vec![60.0];
    cfg.endurance.faults.cryostat_failure_h.clear();
    cfg.endurance.expect_restarts = Some(5);
    cfg.endurance.min_evaporations = Some(3);
    cfg.endurance.deficit_range = None;
    let s = run_experiment(Experiment::Endurance, &cfg, &RunOptions::default())?;
    println!("{:#?}", s.headline);
    for (k, v) in &s.metrics {
        println!("{k:>20} {v:.4}");
    }
    for c in &s.checks {
        println!("{} {} = {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.value);
    }
    Ok(())
}
