//! Runs the rate-level engine from an over-pumped start and prints how the
//! pump loop pulls QBERz to its set-point while the phase loop locks.

use std::sync::Arc;

use qkdlink::cascade::CascadeConfig;
use qkdlink::model::LinkScenario;
use qkdlink::pipeline::{CascadeProfile, EngineConfig, RateEngine};

fn main() -> qkdlink::Result<()> {
    let profile = Arc::new(CascadeProfile::measure(16_384, &CascadeConfig::default(), &CascadeProfile::default_grid(), 2, 1)?);
    let mut sc = LinkScenario::default();
    sc.detector.evaporation = false;
    sc.pump_attenuation_db -= 2.0;
    let cfg = EngineConfig { duration_s: 1800.0, ..Default::default() };
    let r = RateEngine::new(sc, cfg, profile)?.run()?;
    println!("phase lock after {:?} s", r.phase_lock_times_s);
    for u in r.pump_updates.iter().step_by(10) {
        println!("{:7.0} s  QBERz {:.4}  attenuation {:.3} dB  {:?}", u.t_s, u.qber_z, u.attenuation_db, u.mode);
    }
    println!("mean QBERz {:.4}, QBERx {:.4}, SKR {:.0} bps", r.mean_qber_z, r.mean_qber_x, r.skr_bps);
    Ok(())
}
