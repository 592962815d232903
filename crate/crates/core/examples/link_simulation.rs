//! Generates one second of time tags for a 30 dB link and compares the
//! simulated coincidence statistics with the analytic rate model.

use qkdlink::linksim::{link_rates, LinkSimulator, RateInputs};
use qkdlink::model::LinkScenario;
use qkdlink::sift::match_coincidences;
use qkdlink::sync::{ClockDiscipline, DisciplineConfig};

fn main() -> qkdlink::Result<()> {
    let mut sc = LinkScenario::default().with_channel_loss(30.0);
    sc.pair_rate_hz = 2e8;
    sc.clock_b = sc.clock_a.clone();
    let mut sim = LinkSimulator::new(sc.clone())?;
    let batch = sim.next_batch(1.0);
    println!("alice tags {}, bob tags {}", batch.a.len(), batch.b.len());

    // identical clocks, so a zero correction is exact
    let d = ClockDiscipline::new(DisciplineConfig::default());
    let side = sc.z_delay_ps as i64;
    let m = match_coincidences(&batch.a.tags, &batch.b.tags, Some(&d), sc.coincidence_window_ps, side, sim.analyzer())?;
    let zz: Vec<_> = m.records.iter().filter(|r| r.outcome_a.basis() == qkdlink::model::Basis::Z).collect();
    let z_err = zz.iter().filter(|r| r.outcome_a.value() != r.outcome_b.value()).count();
    println!("matched Z-Z {}, X-X {}, side peak {}", m.stats.zz, m.stats.xx, m.stats.side_peak);
    println!("simulated QBERz {:.4}", z_err as f64 / zz.len().max(1) as f64);

    let r = link_rates(&RateInputs::from_scenario(&sc, sc.pump_attenuation_db, 1.0, 1.0, 0.0));
    println!(
        "model: singles {:.0}/{:.0} Hz, Z-Z {:.0} Hz, QBERz {:.4}, QBERx {:.4}",
        r.singles_a_hz,
        r.singles_b_hz,
        r.zz_hz(),
        r.qber_z(),
        r.qber_x()
    );
    Ok(())
}
