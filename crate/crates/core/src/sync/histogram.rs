use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Geometry of a histogram of `t_B - t_A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    pub bin_width_ps: u64,
    /// Half of the span; an integer multiple of the bin width.
    pub half_span_ps: u64,
    /// Delay at the center bin.
    pub center_ps: i64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            bin_width_ps: 4,
            half_span_ps: 2000,
            center_ps: 0,
        }
    }
}

impl HistogramParams {
    pub fn validate(&self) -> Result<()> {
        if self.bin_width_ps == 0 || self.half_span_ps % self.bin_width_ps != 0 {
            return Err(Error::Argument(format!(
                "span {} ps is not a multiple of bin width {} ps",
                self.half_span_ps, self.bin_width_ps
            )));
        }
        Ok(())
    }

    pub fn half_bins(&self) -> usize {
        (self.half_span_ps / self.bin_width_ps) as usize
    }

    pub fn empty(&self, start_s: f64, integration_s: f64) -> CoincidenceHistogram {
        CoincidenceHistogram {
            bin_width_ps: self.bin_width_ps,
            half_bins: self.half_bins(),
            center_ps: self.center_ps,
            counts: vec![0; 2 * self.half_bins() + 1],
            start_s,
            integration_s,
        }
    }
}

/// Binned cross-correlation of two tag streams. Bin `i` is centred on
/// `center_ps + (i - half_bins)·bin_width_ps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    pub half_bins: usize,
    pub center_ps: i64,
    pub counts: Vec<u64>,
    pub start_s: f64,
    pub integration_s: f64,
}

impl CoincidenceHistogram {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center_ps(&self, i: usize) -> i64 {
        self.center_ps + (i as i64 - self.half_bins as i64) * self.bin_width_ps as i64
    }

    /// Position in ps of a fractional bin index.
    pub fn position_ps(&self, idx: f64) -> f64 {
        self.center_ps as f64 + (idx - self.half_bins as f64) * self.bin_width_ps as f64
    }

    pub fn bin_of(&self, delta_ps: i64) -> Option<usize> {
        let bw = self.bin_width_ps as i64;
        let rel = delta_ps - self.center_ps + bw / 2 + self.half_bins as i64 * bw;
        if rel < 0 {
            return None;
        }
        let i = (rel / bw) as usize;
        (i < self.counts.len()).then_some(i)
    }

    /// Mid-point of the integration interval.
    pub fn mid_time_s(&self) -> f64 {
        self.start_s + self.integration_s / 2.0
    }

    /// Adds another histogram of identical geometry; the result spans both intervals.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if other.bin_width_ps != self.bin_width_ps || other.half_bins != self.half_bins || other.center_ps != self.center_ps {
            return Err(Error::Argument("histogram geometries differ".into()));
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        let end = (self.start_s + self.integration_s).max(other.start_s + other.integration_s);
        self.start_s = self.start_s.min(other.start_s);
        self.integration_s = end - self.start_s;
        Ok(())
    }
}

fn check_sorted(ts: &[i64], name: &str) -> Result<()> {
    if ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition(format!("{name} timestamps are not sorted")));
    }
    Ok(())
}

/// Histograms `t_B - t_A` over every pair inside the span with a two-pointer
/// sweep, `O(n_A + n_B + matches)`.
pub fn build_histogram(a: &[i64], b: &[i64], params: &HistogramParams) -> Result<CoincidenceHistogram> {
    params.validate()?;
    check_sorted(a, "Alice")?;
    check_sorted(b, "Bob")?;
    let start_s = a.first().into_iter().chain(b.first()).min().map_or(0.0, |&t| t as f64 * 1e-12);
    let end_s = a.last().into_iter().chain(b.last()).max().map_or(0.0, |&t| t as f64 * 1e-12);
    let mut h = params.empty(start_s, end_s - start_s);
    let bw = params.bin_width_ps as i64;
    let lo_delta = params.center_ps - params.half_span_ps as i64 - bw / 2;
    let hi_delta = lo_delta + (2 * params.half_bins() as i64 + 1) * bw;
    let mut lo = 0usize;
    for &ta in a {
        while lo < b.len() && b[lo] - ta < lo_delta {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() {
            let d = b[j] - ta;
            if d >= hi_delta {
                break;
            }
            h.counts[((d - lo_delta) / bw) as usize] += 1;
            j += 1;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_correlation_lands_in_bin_zero() {
        let a: Vec<i64> = (0..1000).map(|i| i * 10_000).collect();
        let h = build_histogram(&a, &a, &HistogramParams::default()).unwrap();
        assert_eq!(h.counts[h.half_bins], 1000);
        assert_eq!(h.total(), 1000);
        assert_eq!(h.len(), 1001);
    }

    #[test]
    fn offset_stream_peaks_at_offset() {
        let a: Vec<i64> = (0..500).map(|i| i * 1_000_000).collect();
        let b: Vec<i64> = a.iter().map(|t| t + 1000).collect();
        let h = build_histogram(&a, &b, &HistogramParams::default()).unwrap();
        let i = h.counts.iter().position(|&c| c == 500).unwrap();
        assert_eq!(h.bin_center_ps(i), 1000);
    }

    #[test]
    fn bin_edges_are_half_open() {
        let p = HistogramParams::default();
        let h = p.empty(0.0, 1.0);
        assert_eq!(h.bin_of(0), Some(500));
        assert_eq!(h.bin_of(1), Some(500));
        assert_eq!(h.bin_of(2), Some(501));
        assert_eq!(h.bin_of(-2), Some(500));
        assert_eq!(h.bin_of(-3), Some(499));
        assert_eq!(h.bin_of(-2002), Some(0));
        assert_eq!(h.bin_of(-2003), None);
        assert_eq!(h.bin_of(2001), Some(1000));
        assert_eq!(h.bin_of(2002), None);
        // the sweep uses the same edges
        let a = vec![10_000i64];
        for d in [-2003i64, -2002, -2, 1, 2, 2001, 2002] {
            let hh = build_histogram(&a, &[10_000 + d], &p).unwrap();
            match h.bin_of(d) {
                Some(i) => assert_eq!(hh.counts[i], 1, "d={d}"),
                None => assert_eq!(hh.total(), 0, "d={d}"),
            }
        }
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let r = build_histogram(&[2, 1], &[1, 2], &HistogramParams::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
        let bad = HistogramParams { half_span_ps: 2002, ..Default::default() };
        assert!(build_histogram(&[1], &[1], &bad).is_err());
    }
}
