use serde::{Deserialize, Serialize};

use super::acquisition::{acquisition_search, AcquisitionConfig};
use super::discipline::{update_discipline, ClockDiscipline, DisciplineConfig};
use super::histogram::{build_histogram, CoincidenceHistogram, HistogramParams};
use super::peak::{find_peak, PeakConfig, PeakEstimate};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncConfig {
    pub histogram: HistogramParams,
    pub peak: PeakConfig,
    pub discipline: DisciplineConfig,
    pub acquisition: AcquisitionConfig,
    /// Cadence of tracking histograms.
    pub integration_s: f64,
    /// Longest integration the clocks tolerate before drift smears the peak
    /// past the coincidence window.
    pub max_integration_s: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            histogram: HistogramParams::default(),
            peak: PeakConfig::default(),
            discipline: DisciplineConfig::default(),
            acquisition: AcquisitionConfig::default(),
            integration_s: 0.5,
            max_integration_s: 120.0 / 7.0,
        }
    }
}

impl SyncConfig {
    /// Integration ceiling for a given clock-drift bound and coincidence window.
    pub fn with_drift_bound(mut self, drift_ps_per_s: f64, window_ps: f64) -> Self {
        self.max_integration_s = window_ps / drift_ps_per_s.abs().max(1e-9);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncEvent {
    /// Still integrating.
    Accumulating,
    /// Acquisition found the peak; tracking starts.
    Locked(PeakEstimate),
    /// Tracking update applied; carries the measured residual.
    Updated(PeakEstimate),
    /// Tracking histogram reached the integration ceiling without a valid peak.
    Missed,
    /// Too many misses; back to acquisition.
    LockLost,
    /// Acquisition exhausted the integration ceiling.
    AcquisitionFailed(String),
}

/// Tracking loop: acquisition, then periodic histogram updates of the discipline.
pub struct SyncEngine {
    cfg: SyncConfig,
    discipline: Option<ClockDiscipline>,
    last_valid: Option<PeakEstimate>,
    track: Option<CoincidenceHistogram>,
    buf_a: Vec<i64>,
    buf_b: Vec<i64>,
    buf_start_s: Option<f64>,
    next_attempt_s: f64,
    pub acquisitions: u32,
    pub acquisition_failures: u32,
}

impl SyncEngine {
    pub fn new(cfg: SyncConfig) -> Self {
        let first = cfg.integration_s;
        Self {
            cfg,
            discipline: None,
            last_valid: None,
            track: None,
            buf_a: Vec::new(),
            buf_b: Vec::new(),
            buf_start_s: None,
            next_attempt_s: first,
            acquisitions: 0,
            acquisition_failures: 0,
        }
    }

    /// Warm start from a checkpointed discipline; its reference time serves
    /// as the previous update.
    pub fn with_discipline(cfg: SyncConfig, d: ClockDiscipline) -> Self {
        let mut e = Self::new(cfg);
        e.last_valid = Some(PeakEstimate {
            position_ps: 0.0,
            significance: 0.0,
            signal_counts: 0.0,
            valid: true,
            time_s: d.ref_time_s,
        });
        e.discipline = Some(d);
        e
    }

    pub fn config(&self) -> &SyncConfig {
        &self.cfg
    }

    pub fn is_locked(&self) -> bool {
        self.discipline.is_some()
    }

    pub fn discipline(&self) -> Option<&ClockDiscipline> {
        self.discipline.as_ref()
    }

    /// Drops lock, e.g. after a pipeline restart.
    pub fn reset(&mut self) {
        *self = Self::new(self.cfg.clone());
    }

    /// Applies the current correction to Bob's raw timestamps.
    pub fn correct(&self, b_raw: &[i64]) -> Option<Vec<i64>> {
        self.discipline.as_ref().map(|d| d.apply_all(b_raw))
    }

    /// Consumes one batch covering `[t_start_s, t_end_s)`.
    pub fn process(&mut self, a: &[i64], b_raw: &[i64], t_start_s: f64, t_end_s: f64) -> Result<SyncEvent> {
        match self.discipline.clone() {
            None => self.acquire(a, b_raw, t_start_s, t_end_s),
            Some(d) => self.track(&d, a, b_raw, t_start_s, t_end_s),
        }
    }

    fn acquire(&mut self, a: &[i64], b_raw: &[i64], t_start_s: f64, t_end_s: f64) -> Result<SyncEvent> {
        let start = *self.buf_start_s.get_or_insert(t_start_s);
        self.buf_a.extend_from_slice(a);
        self.buf_b.extend_from_slice(b_raw);
        let span = t_end_s - start;
        if span + 1e-9 < self.next_attempt_s {
            return Ok(SyncEvent::Accumulating);
        }
        match acquisition_search(&self.buf_a, &self.buf_b, &self.cfg.acquisition, &self.cfg.peak) {
            Ok(acq) => {
                let mut peak = acq.peak;
                peak.time_s = (start + t_end_s) / 2.0;
                self.lock(peak);
                Ok(SyncEvent::Locked(peak))
            }
            Err(e) => {
                let next = self.next_attempt_s * 2.0;
                if next > self.cfg.max_integration_s + 1e-9 && self.next_attempt_s >= self.cfg.max_integration_s - 1e-9 {
                    self.clear_buffer();
                    self.acquisition_failures += 1;
                    Ok(SyncEvent::AcquisitionFailed(e.to_string()))
                } else {
                    self.next_attempt_s = next.min(self.cfg.max_integration_s);
                    Ok(SyncEvent::Accumulating)
                }
            }
        }
    }

    fn clear_buffer(&mut self) {
        self.buf_a.clear();
        self.buf_b.clear();
        self.buf_start_s = None;
        self.next_attempt_s = self.cfg.integration_s;
    }

    fn track(&mut self, d: &ClockDiscipline, a: &[i64], b_raw: &[i64], t_start_s: f64, t_end_s: f64) -> Result<SyncEvent> {
        let b = d.apply_all(b_raw);
        let mut h = build_histogram(a, &b, &self.cfg.histogram)?;
        h.start_s = t_start_s;
        h.integration_s = t_end_s - t_start_s;
        self.track_histogram(h)
    }

    /// Locks on a peak found outside the engine, e.g. by a histogram-level acquisition.
    pub fn lock(&mut self, peak: PeakEstimate) {
        self.discipline = Some(ClockDiscipline::from_acquisition(self.cfg.discipline.clone(), &peak));
        self.last_valid = Some(PeakEstimate { position_ps: 0.0, ..peak });
        self.clear_buffer();
        self.track = None;
        self.acquisitions += 1;
    }

    /// Tracking step on a histogram of corrected delays. Requires lock.
    pub fn track_histogram(&mut self, h: CoincidenceHistogram) -> Result<SyncEvent> {
        let d = self
            .discipline
            .clone()
            .ok_or_else(|| crate::Error::SyncFailure("tracking without lock".into()))?;
        match &mut self.track {
            Some(acc) => acc.merge(&h)?,
            None => self.track = Some(h),
        }
        let acc = self.track.as_ref().expect("accumulator present");
        if acc.integration_s + 1e-9 < self.cfg.integration_s {
            return Ok(SyncEvent::Accumulating);
        }
        let peak = find_peak(acc, &self.cfg.peak);
        let prev = self.last_valid.unwrap_or(PeakEstimate::invalid(peak.time_s));
        if peak.valid {
            let dt = peak.time_s - prev.time_s;
            self.discipline = Some(update_discipline(&d, &prev, &peak, dt));
            self.last_valid = Some(peak);
            self.track = None;
            return Ok(SyncEvent::Updated(peak));
        }
        if acc.integration_s + 1e-9 < self.cfg.max_integration_s {
            return Ok(SyncEvent::Accumulating);
        }
        self.track = None;
        let next = update_discipline(&d, &prev, &peak, acc_dt(&prev, &peak));
        if next.acquisition_mode {
            self.discipline = None;
            self.last_valid = None;
            return Ok(SyncEvent::LockLost);
        }
        self.discipline = Some(next);
        Ok(SyncEvent::Missed)
    }
}

fn acc_dt(prev: &PeakEstimate, cur: &PeakEstimate) -> f64 {
    (cur.time_s - prev.time_s).max(1e-9)
}
