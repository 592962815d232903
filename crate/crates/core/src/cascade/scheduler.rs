use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::session::{cascade_reconcile, CascadeConfig, ReconciledBlock};
use crate::Result;

/// One queued reconciliation.
#[derive(Debug, Clone)]
pub struct CascadeJob {
    pub instance: u64,
    pub alice: Vec<bool>,
    pub bob: Vec<bool>,
    pub qber_estimate: f64,
    pub seed: u64,
}

/// Cost model for one instance: every round waits a classical round trip,
/// and every bit costs fixed processing time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceTiming {
    pub rtt_s: f64,
    pub per_bit_s: f64,
}

impl Default for InstanceTiming {
    fn default() -> Self {
        Self { rtt_s: 0.01, per_bit_s: 5e-6 }
    }
}

impl InstanceTiming {
    pub fn duration_s(&self, rounds: u32, n_bits: usize) -> f64 {
        rounds as f64 * self.rtt_s + n_bits as f64 * self.per_bit_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub instance: u64,
    pub n_bits: usize,
    pub rounds: u32,
    pub leaked_bits: u64,
    pub verified: bool,
    pub worker: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone)]
pub struct ThroughputReport {
    pub max_parallel: usize,
    pub instances: usize,
    /// Bits of verified blocks.
    pub reconciled_bits: u64,
    /// Modeled completion time of the whole queue.
    pub makespan_s: f64,
    pub throughput_bps: f64,
    pub records: Vec<InstanceRecord>,
    pub results: Vec<ReconciledBlock>,
}

/// Reconciles a queue with at most `max_parallel` instances in flight.
///
/// The reconciliations really run on a worker pool; time is modeled with
/// [`InstanceTiming`] and greedy list scheduling in queue order, so reports
/// are deterministic.
pub fn schedule_instances(
    jobs: &[CascadeJob],
    max_parallel: usize,
    cfg: &CascadeConfig,
    timing: &InstanceTiming,
) -> Result<ThroughputReport> {
    let max_parallel = max_parallel.max(1);
    let threads = max_parallel
        .min(std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(jobs.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ReconciledBlock>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = cascade_reconcile(&job.alice, &job.bob, job.qber_estimate, cfg, job.instance, job.seed);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    let results: Vec<ReconciledBlock> = slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_>>()?;

    let mut free_at = vec![0.0f64; max_parallel];
    let mut records = Vec::with_capacity(jobs.len());
    for (job, r) in jobs.iter().zip(&results) {
        let (worker, &start) = free_at
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one worker");
        let end = start + timing.duration_s(r.rounds, job.bob.len());
        free_at[worker] = end;
        records.push(InstanceRecord {
            instance: job.instance,
            n_bits: job.bob.len(),
            rounds: r.rounds,
            leaked_bits: r.leaked_bits,
            verified: r.residual_verified,
            worker,
            start_s: start,
            end_s: end,
        });
    }
    let makespan_s = records.iter().map(|r| r.end_s).fold(0.0, f64::max);
    let reconciled_bits: u64 = records.iter().filter(|r| r.verified).map(|r| r.n_bits as u64).sum();
    Ok(ThroughputReport {
        max_parallel,
        instances: jobs.len(),
        reconciled_bits,
        makespan_s,
        throughput_bps: if makespan_s > 0.0 { reconciled_bits as f64 / makespan_s } else { 0.0 },
        records,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linksim::rng_stream;
    use rand::Rng;

    fn jobs(count: usize, n: usize) -> Vec<CascadeJob> {
        let mut rng = rng_stream(8, 0);
        (0..count)
            .map(|i| {
                let alice: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                let bob = alice.iter().map(|&x| x ^ rng.random_bool(0.04)).collect();
                CascadeJob { instance: i as u64, alice, bob, qber_estimate: 0.04, seed: i as u64 }
            })
            .collect()
    }

    #[test]
    fn single_instance_matches_its_own_rate() {
        let j = jobs(1, 4096);
        let t = InstanceTiming::default();
        let r = schedule_instances(&j, 4, &CascadeConfig::default(), &t).unwrap();
        let d = t.duration_s(r.results[0].rounds, 4096);
        assert!((r.throughput_bps - 4096.0 / d).abs() < 1e-9);
    }

    #[test]
    fn throughput_is_non_decreasing_in_parallelism() {
        let j = jobs(24, 2048);
        let cfg = CascadeConfig::default();
        let t = InstanceTiming::default();
        let mut prev = 0.0;
        for p in 1..=8 {
            let r = schedule_instances(&j, p, &cfg, &t).unwrap();
            assert!(r.throughput_bps >= prev - 1e-9, "p={p}");
            prev = r.throughput_bps;
        }
    }
}
