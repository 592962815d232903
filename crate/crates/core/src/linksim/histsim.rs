use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::rates::LinkRates;
use crate::sync::{CoincidenceHistogram, HistogramParams};

/// Shape of the coincidence peak for direct histogram sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakShape {
    /// Combined two-detector jitter.
    pub sigma_ps: f64,
    /// Side-peak offset (Z delay / interferometer imbalance).
    pub side_offset_ps: f64,
}

/// Draws the histogram that tag-level correlation would produce over
/// `[start_s, start_s + dur_s)`: true coincidences around the residual offset
/// `residual_ps(t)`, side peaks at ±τ, and a Poisson accidental floor.
pub fn sample_histogram<R: Rng, F: FnMut(f64) -> f64>(
    rates: &LinkRates,
    shape: PeakShape,
    params: &HistogramParams,
    start_s: f64,
    dur_s: f64,
    mut residual_ps: F,
    rng: &mut R,
) -> CoincidenceHistogram {
    let mut h = params.empty(start_s, dur_s);
    let floor = rates.singles_a_hz * rates.singles_b_hz * params.bin_width_ps as f64 * 1e-12 * dur_s;
    if floor > 0.0 {
        let p = Poisson::new(floor).expect("finite floor");
        for c in h.counts.iter_mut() {
            *c = p.sample(rng) as u64;
        }
    }
    let jitter = Normal::new(0.0, shape.sigma_ps.max(1e-9)).expect("finite sigma");
    let mut peak = |mean: f64, offset: f64, h: &mut CoincidenceHistogram, rng: &mut R| {
        if mean <= 0.0 {
            return;
        }
        let n = Poisson::new(mean).expect("finite mean").sample(rng) as u64;
        for _ in 0..n {
            let t = start_s + rng.random::<f64>() * dur_s;
            let d = residual_ps(t) + offset + jitter.sample(rng);
            if let Some(i) = h.bin_of(d.round() as i64) {
                h.counts[i] += 1;
            }
        }
    };
    peak(rates.central_hz * dur_s, 0.0, &mut h, rng);
    peak(rates.side_hz * dur_s, shape.side_offset_ps, &mut h, rng);
    peak(rates.side_hz * dur_s, -shape.side_offset_ps, &mut h, rng);
    h
}
