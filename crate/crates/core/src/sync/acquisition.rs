use serde::{Deserialize, Serialize};

use super::histogram::{build_histogram, CoincidenceHistogram, HistogramParams};
use super::peak::{find_peak, PeakConfig, PeakEstimate};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub initial_half_span_ps: u64,
    pub growth: u64,
    pub max_half_span_ps: u64,
    pub bin_width_ps: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            initial_half_span_ps: 2000,
            growth: 4,
            max_half_span_ps: 1_000_000,
            bin_width_ps: 4,
        }
    }
}

/// Result of a successful search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    pub peak: PeakEstimate,
    pub attempts: u32,
    pub half_span_ps: u64,
}

/// Searches for the coincidence peak with a span widened geometrically per
/// attempt, capped at `max_half_span_ps`.
pub fn acquisition_search(a: &[i64], b: &[i64], cfg: &AcquisitionConfig, peak_cfg: &PeakConfig) -> Result<Acquisition> {
    acquisition_with(cfg, peak_cfg, |params| build_histogram(a, b, params))
}

/// Same search over histograms produced by `histogram` for each span, so
/// rate-level runs can feed directly sampled histograms.
pub fn acquisition_with<F>(cfg: &AcquisitionConfig, peak_cfg: &PeakConfig, mut histogram: F) -> Result<Acquisition>
where
    F: FnMut(&HistogramParams) -> Result<CoincidenceHistogram>,
{
    if cfg.growth < 2 || cfg.initial_half_span_ps == 0 {
        return Err(Error::Argument("acquisition needs growth >= 2 and a positive span".into()));
    }
    let mut span = cfg.initial_half_span_ps;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let params = HistogramParams {
            bin_width_ps: cfg.bin_width_ps,
            half_span_ps: span / cfg.bin_width_ps * cfg.bin_width_ps,
            center_ps: 0,
        };
        let h = histogram(&params)?;
        let peak = find_peak(&h, peak_cfg);
        if peak.valid {
            return Ok(Acquisition {
                peak,
                attempts,
                half_span_ps: params.half_span_ps,
            });
        }
        if span >= cfg.max_half_span_ps {
            return Err(Error::SyncFailure(format!(
                "no coincidence peak within ±{} ps after {attempts} attempts (best significance {:.1}σ, signal {:.0})",
                span, peak.significance, peak.signal_counts
            )));
        }
        span = (span * cfg.growth).min(cfg.max_half_span_ps);
    }
}

