//! Reconciles random blocks with Cascade, reports leakage against the
//! Shannon bound, then shows how the instance cap limits throughput.

use qkdlink::cascade::{cascade_reconcile, schedule_instances, CascadeConfig, CascadeJob, InstanceTiming};
use qkdlink::linksim::rng_stream;
use qkdlink::pa::h2;
use rand::Rng;

fn noisy_pair(n: usize, q: f64, seed: u64) -> (Vec<bool>, Vec<bool>) {
    let mut rng = rng_stream(seed, 0);
    let alice: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let bob = alice.iter().map(|&b| b ^ (rng.random::<f64>() < q)).collect();
    (alice, bob)
}

fn main() -> qkdlink::Result<()> {
    let cfg = CascadeConfig::default();
    for q in [0.01, 0.02, 0.043, 0.08] {
        let (a, b) = noisy_pair(16_384, q, 1);
        let r = cascade_reconcile(&a, &b, q, &cfg, 0, 99)?;
        let f = r.leaked_bits as f64 / (a.len() as f64 * h2(q));
        println!(
            "q={q:.3}  leaked {:5} bits  f_ec {f:.3}  rounds {:3}  verified {}  equal {}",
            r.leaked_bits,
            r.rounds,
            r.residual_verified,
            r.bits == a
        );
    }

    let jobs: Vec<CascadeJob> = (0..32)
        .map(|i| {
            let (alice, bob) = noisy_pair(16_384, 0.043, 100 + i);
            CascadeJob { instance: i, alice, bob, qber_estimate: 0.043, seed: i }
        })
        .collect();
    let timing = InstanceTiming::default();
    for k in [1, 4, 16] {
        let t = schedule_instances(&jobs, k, &cfg, &timing)?;
        println!("max_parallel {k:2}: {:.0} reconciled bits/s", t.throughput_bps);
    }
    Ok(())
}
