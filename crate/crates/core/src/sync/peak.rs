use serde::{Deserialize, Serialize};

use super::histogram::CoincidenceHistogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    pub threshold_sigma: f64,
    /// Half-width of the detection and centroid window.
    pub window_half_width_ps: u64,
    /// Floor-subtracted counts the window must hold for the peak to be trusted.
    pub min_signal_counts: f64,
    /// Offsets from the main peak (e.g. Franson side peaks at ±τ) kept out of the floor estimate.
    pub exclude_offsets_ps: Vec<i64>,
    pub refine_iterations: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            threshold_sigma: 5.0,
            window_half_width_ps: 60,
            min_signal_counts: 100.0,
            exclude_offsets_ps: vec![-400, 400],
            refine_iterations: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub position_ps: f64,
    /// Window excess over the accidental floor in units of the floor's standard deviation.
    pub significance: f64,
    /// Floor-subtracted counts in the peak window.
    pub signal_counts: f64,
    pub valid: bool,
    /// Mid-point of the histogram's integration interval.
    pub time_s: f64,
}

impl PeakEstimate {
    pub fn invalid(time_s: f64) -> Self {
        Self {
            position_ps: 0.0,
            significance: 0.0,
            signal_counts: 0.0,
            valid: false,
            time_s,
        }
    }
}

/// Locates the coincidence peak.
///
/// The coarse location is the maximum of the counts summed over a sliding
/// window of `±window_half_width_ps`. The accidental floor is estimated from
/// bins away from the peak and its side peaks. The position is refined by an
/// iterated floor-subtracted centroid over the same window.
pub fn find_peak(h: &CoincidenceHistogram, cfg: &PeakConfig) -> PeakEstimate {
    let n = h.counts.len();
    if n == 0 || h.total() == 0 {
        return PeakEstimate::invalid(h.mid_time_s());
    }
    let bw = h.bin_width_ps as i64;
    let k = (cfg.window_half_width_ps as i64 / bw).max(0) as usize;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u64);
    for &c in &h.counts {
        prefix.push(prefix.last().unwrap() + c);
    }
    let wsum = |i: usize| prefix[(i + k + 1).min(n)] - prefix[i.saturating_sub(k)];
    let mut best = 0usize;
    let mut best_sum = 0u64;
    for i in 0..n {
        let s = wsum(i);
        if s > best_sum {
            best_sum = s;
            best = i;
        }
    }

    // floor from bins outside the guarded peak and side-peak regions
    let guard = 2 * k as i64 + 2;
    let excluded = |j: usize| {
        let d = j as i64 - best as i64;
        d.abs() <= guard || cfg.exclude_offsets_ps.iter().any(|o| (d - o / bw).abs() <= guard)
    };
    let (mut fn_, mut fsum, mut fsq) = (0f64, 0f64, 0f64);
    for (j, &c) in h.counts.iter().enumerate() {
        if !excluded(j) {
            fn_ += 1.0;
            fsum += c as f64;
            fsq += (c as f64).powi(2);
        }
    }
    let (mu, var) = if fn_ > 1.0 {
        let m = fsum / fn_;
        (m, ((fsq - fn_ * m * m) / (fn_ - 1.0)).max(0.0))
    } else {
        (0.0, 0.0)
    };
    let width = (2 * k + 1) as f64;
    let floor_mean = mu * width;
    let mut floor_std = (var.max(mu) * width).sqrt();
    if floor_std == 0.0 {
        floor_std = 1.0;
    }
    let signal = best_sum as f64 - floor_mean;
    let significance = signal / floor_std;

    let mut center = best as f64;
    for _ in 0..cfg.refine_iterations.max(1) {
        let c = center.round() as i64;
        let (mut sw, mut swx) = (0f64, 0f64);
        for j in (c - k as i64).max(0)..=(c + k as i64).min(n as i64 - 1) {
            let w = h.counts[j as usize] as f64 - mu;
            sw += w;
            swx += w * j as f64;
        }
        if sw <= 0.0 {
            break;
        }
        let next = swx / sw;
        if (next - center).abs() < 1e-9 {
            center = next;
            break;
        }
        center = next.clamp(0.0, (n - 1) as f64);
    }
    PeakEstimate {
        position_ps: h.position_ps(center),
        significance,
        signal_counts: signal,
        valid: significance >= cfg.threshold_sigma && signal >= cfg.min_signal_counts,
        time_s: h.mid_time_s(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::HistogramParams;

    #[test]
    fn delta_peak_without_floor() {
        let mut h = HistogramParams::default().empty(0.0, 0.5);
        let i = h.bin_of(1000).unwrap();
        h.counts[i] = 1000;
        let p = find_peak(&h, &PeakConfig::default());
        assert!(p.valid);
        assert_eq!(p.position_ps, 1000.0);
    }

    #[test]
    fn empty_histogram_is_invalid() {
        let h = HistogramParams::default().empty(0.0, 0.5);
        assert!(!find_peak(&h, &PeakConfig::default()).valid);
    }
}
