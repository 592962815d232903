//! Acquires and tracks the clock offset between two stations whose clocks
//! drift apart at 7 ps/s, printing the measured residual of each update.

use qkdlink::linksim::LinkSimulator;
use qkdlink::model::LinkScenario;
use qkdlink::sync::{SyncConfig, SyncEngine, SyncEvent};

fn main() -> qkdlink::Result<()> {
    let mut sc = LinkScenario::default().with_channel_loss(25.0);
    sc.pair_rate_hz = 2e8;
    sc.clock_b.initial_offset_ps = 6.0e5;
    let mut sim = LinkSimulator::new(sc)?;
    let mut engine = SyncEngine::new(SyncConfig::default());
    for _ in 0..40 {
        let t0 = sim.now_s();
        let batch = sim.next_batch(0.5);
        match engine.process(&batch.a.times(), &batch.b.times(), t0, sim.now_s())? {
            SyncEvent::Locked(p) => println!("{:6.1} s  locked, offset found with significance {:.1}", p.time_s, p.significance),
            SyncEvent::Updated(p) => {
                let truth = sim.true_offset_ps(qkdlink::model::Station::Bob, p.time_s);
                let applied = engine.discipline().map_or(0.0, |d| d.correction_ps(p.time_s));
                println!("{:6.1} s  residual {:+6.1} ps  (correction error {:+6.1} ps)", p.time_s, p.position_ps, applied - truth);
            }
            SyncEvent::LockLost => println!("lock lost"),
            SyncEvent::AcquisitionFailed(e) => println!("{e}"),
            _ => {}
        }
    }
    Ok(())
}
