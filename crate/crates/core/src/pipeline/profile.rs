use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{cascade_reconcile, CascadeConfig, InstanceTiming};
use crate::linksim::rng_stream;
use crate::pa::h2;
use crate::Result;

/// Mean cost of one Cascade block at a given error fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub qber: f64,
    /// Parity bits disclosed per block bit.
    pub leak_fraction: f64,
    pub rounds: f64,
    /// Fraction of blocks whose verification hash matched.
    pub verified_fraction: f64,
}

/// Cascade cost table measured by running the real protocol on synthetic
/// blocks. Rate-level runs read leakage and round counts from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeProfile {
    pub block_bits: usize,
    pub points: Vec<ProfilePoint>,
}

impl CascadeProfile {
    /// Error fractions measured by default.
    pub fn default_grid() -> Vec<f64> {
        vec![0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.10, 0.12, 0.15]
    }

    /// Runs `trials` blocks per grid point, each with exactly `round(q·n)` errors.
    pub fn measure(block_bits: usize, cfg: &CascadeConfig, grid: &[f64], trials: usize, seed: u64) -> Result<Self> {
        let trials = trials.max(1);
        let points = std::thread::scope(|s| {
            let handles: Vec<_> = grid
                .iter()
                .enumerate()
                .map(|(gi, &q)| s.spawn(move || measure_point(block_bits, cfg, q, trials, seed, gi as u64)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("profile worker")).collect::<Result<Vec<_>>>()
        })?;
        Ok(Self { block_bits, points })
    }

    /// Linear interpolation in the error fraction, clamped to the grid.
    pub fn at(&self, qber: f64) -> ProfilePoint {
        let pts = &self.points;
        if qber <= pts[0].qber {
            return ProfilePoint { qber, ..pts[0] };
        }
        let last = pts[pts.len() - 1];
        if qber >= last.qber {
            return ProfilePoint { qber, ..last };
        }
        let i = pts.partition_point(|p| p.qber <= qber);
        let (a, b) = (pts[i - 1], pts[i]);
        let w = (qber - a.qber) / (b.qber - a.qber);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        ProfilePoint {
            qber,
            leak_fraction: lerp(a.leak_fraction, b.leak_fraction),
            rounds: lerp(a.rounds, b.rounds),
            verified_fraction: lerp(a.verified_fraction, b.verified_fraction),
        }
    }

    /// Reconciled bits/s sustained by `max_parallel` instances at `qber`.
    pub fn capacity_bps(&self, qber: f64, timing: &InstanceTiming, max_parallel: usize) -> f64 {
        let n = self.block_bits as f64;
        let per_block = self.at(qber).rounds * timing.rtt_s + n * timing.per_bit_s;
        max_parallel as f64 * n / per_block
    }

    /// Reconciliation efficiency `leak / (n·h2(q))`.
    pub fn f_ec(&self, qber: f64) -> f64 {
        self.at(qber).leak_fraction / h2(qber).max(1e-12)
    }
}

fn measure_point(n: usize, cfg: &CascadeConfig, q: f64, trials: usize, seed: u64, point: u64) -> Result<ProfilePoint> {
    let (mut leak, mut rounds, mut ok) = (0.0, 0.0, 0usize);
    for t in 0..trials {
        let mut rng = rng_stream(seed, 0x5052_0000 + point * 1024 + t as u64);
        let alice: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let mut bob = alice.clone();
        let errors = ((q * n as f64).round() as usize).min(n);
        for i in rand::seq::index::sample(&mut rng, n, errors) {
            bob[i] = !bob[i];
        }
        let shuffle = rng.random::<u64>();
        let r = cascade_reconcile(&alice, &bob, q, cfg, t as u64, shuffle)?;
        leak += r.leaked_bits as f64 / n as f64;
        rounds += r.rounds as f64;
        ok += (r.residual_verified && r.bits == alice) as usize;
    }
    let k = trials as f64;
    Ok(ProfilePoint {
        qber: q,
        leak_fraction: leak / k,
        rounds: rounds / k,
        verified_fraction: ok as f64 / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_is_monotone_and_interpolates() {
        let p = CascadeProfile::measure(4096, &CascadeConfig::default(), &[0.01, 0.04, 0.08], 2, 3).unwrap();
        assert!(p.points.windows(2).all(|w| w[0].leak_fraction < w[1].leak_fraction));
        assert!(p.points.iter().all(|x| x.verified_fraction == 1.0));
        let mid = p.at(0.025);
        assert!(mid.leak_fraction > p.points[0].leak_fraction && mid.leak_fraction < p.points[1].leak_fraction);
        assert_eq!(p.at(0.5).leak_fraction, p.points[2].leak_fraction);
        let f = p.f_ec(0.04);
        assert!((1.0..1.5).contains(&f), "{f}");
    }
}
