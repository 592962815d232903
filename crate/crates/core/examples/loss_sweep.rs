//! Calibrates on the 20 dB anchor and sweeps the channel loss, printing the
//! projected secret key rate next to the steady-state model.

use qkdlink::harness::{prepare, sweep_checks, sweep_points, ExperimentConfig};

fn main() -> qkdlink::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.loss_sweep.run_s = 300.0;
    let p = prepare(&cfg, 1)?;
    println!("loss_dB  QBERz   QBERx   key_bps     SKR_bps     model_bps");
    let points = sweep_points(&cfg, &p)?;
    for x in &points {
        println!(
            "{:7.1}  {:.4}  {:.4}  {:10.2}  {:10.3}  {:10.3}",
            x.loss_db, x.qber_z, x.qber_x, x.key_rate_bps, x.skr_bps, x.model_skr_bps
        );
    }
    for c in sweep_checks(&points) {
        println!("{} {} = {:.3}", if c.pass { "pass" } else { "FAIL" }, c.name, c.value);
    }
    Ok(())
}
