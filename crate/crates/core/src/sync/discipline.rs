use serde::{Deserialize, Serialize};

use super::peak::PeakEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisciplineConfig {
    /// Weight of the newest displacement/dt sample in the frequency estimate.
    pub alpha: f64,
    /// Consecutive invalid estimates before acquisition mode is raised.
    pub max_failures: u32,
}

impl Default for DisciplineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            max_failures: 4,
        }
    }
}

/// Affine correction applied to Bob's raw timestamps:
/// `t' = t - (offset + freq·(t - ref))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockDiscipline {
    pub cfg: DisciplineConfig,
    pub offset_ps: f64,
    pub freq_ps_per_s: f64,
    pub ref_time_s: f64,
    /// (time, peak position measured on the corrected stream).
    pub residuals: Vec<(f64, f64)>,
    pub consecutive_failures: u32,
    pub acquisition_mode: bool,
    pub updates: u64,
}

impl ClockDiscipline {
    pub fn new(cfg: DisciplineConfig) -> Self {
        Self {
            cfg,
            offset_ps: 0.0,
            freq_ps_per_s: 0.0,
            ref_time_s: 0.0,
            residuals: Vec::new(),
            consecutive_failures: 0,
            acquisition_mode: false,
            updates: 0,
        }
    }

    /// Starts tracking from an acquired peak.
    pub fn from_acquisition(cfg: DisciplineConfig, peak: &PeakEstimate) -> Self {
        Self {
            offset_ps: peak.position_ps,
            ref_time_s: peak.time_s,
            ..Self::new(cfg)
        }
    }

    pub fn correction_ps(&self, t_s: f64) -> f64 {
        self.offset_ps + self.freq_ps_per_s * (t_s - self.ref_time_s)
    }

    pub fn apply(&self, t_raw_ps: i64) -> i64 {
        t_raw_ps - self.correction_ps(t_raw_ps as f64 * 1e-12).round() as i64
    }

    pub fn apply_all(&self, raw: &[i64]) -> Vec<i64> {
        raw.iter().map(|&t| self.apply(t)).collect()
    }

    /// The correction as `t' = a·t + b` with `t` in ps.
    pub fn as_affine(&self) -> (f64, f64) {
        let f = self.freq_ps_per_s * 1e-12;
        (1.0 - f, f * self.ref_time_s * 1e12 - self.offset_ps)
    }

    pub fn last_residual_ps(&self) -> Option<f64> {
        self.residuals.last().map(|r| r.1)
    }
}

/// One discipline step from the peak measured on the corrected stream.
///
/// The displacement is absorbed into the offset, anchored at the histogram's
/// mid-time, and the frequency correction moves by `alpha·displacement/dt`.
/// An invalid estimate leaves the correction untouched and counts a failure.
pub fn update_discipline(d: &ClockDiscipline, previous: &PeakEstimate, current: &PeakEstimate, dt_s: f64) -> ClockDiscipline {
    let mut next = d.clone();
    if !previous.valid || !current.valid || !(dt_s > 0.0) {
        next.consecutive_failures += 1;
        if next.consecutive_failures >= d.cfg.max_failures {
            next.acquisition_mode = true;
        }
        return next;
    }
    let m = current.position_ps;
    next.offset_ps = d.correction_ps(current.time_s) + m;
    next.ref_time_s = current.time_s;
    next.freq_ps_per_s = d.freq_ps_per_s + d.cfg.alpha * m / dt_s;
    next.residuals.push((current.time_s, m));
    next.consecutive_failures = 0;
    next.acquisition_mode = false;
    next.updates += 1;
    next
}
