//! Matches coincidences, sifts by basis and cuts a raw key block with a
//! disclosed error-estimation sample.

use qkdlink::linksim::{rng_stream, LinkSimulator};
use qkdlink::model::LinkScenario;
use qkdlink::sift::{extract_sifted_block, match_coincidences, qber_confidence, SiftConfig};
use qkdlink::sync::{ClockDiscipline, DisciplineConfig};

fn main() -> qkdlink::Result<()> {
    let mut sc = LinkScenario::default().with_channel_loss(25.0);
    sc.pair_rate_hz = 2e8;
    sc.clock_b = sc.clock_a.clone();
    let mut sim = LinkSimulator::new(sc.clone())?;
    let batch = sim.next_batch(6.0);
    let d = ClockDiscipline::new(DisciplineConfig::default());
    let m = match_coincidences(&batch.a.tags, &batch.b.tags, Some(&d), sc.coincidence_window_ps, sc.z_delay_ps as i64, sim.analyzer())?;
    println!("{:?}", m.stats);

    let cfg = SiftConfig { sample_fraction: 0.05, min_block: 4096 };
    let mut rng = rng_stream(7, 0);
    match extract_sifted_block(0, &m.records, &cfg, &mut rng) {
        Some(b) => {
            let q = qber_confidence(b.sample_size, b.sample_errors)?;
            println!("block of {} key bits", b.len());
            println!("QBERz from sample {:.4} (95 % interval {:.4}..{:.4})", b.z_error_estimate, q.lower, q.upper);
            println!("QBERz of retained key {:.4}", b.actual_errors() as f64 / b.len() as f64);
            println!("QBERx {:.4} over {} events", b.qber_x(), b.x_agree + b.x_disagree);
        }
        None => println!("not enough Z-Z events for a block yet"),
    }
    Ok(())
}
