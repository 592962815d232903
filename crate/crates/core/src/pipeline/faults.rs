use serde::{Deserialize, Serialize};

use crate::model::DetectorModel;

/// Step change of the extra channel attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossStep {
    pub time_s: f64,
    pub extra_loss_db: f64,
}

/// Injected faults of a long run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSchedule {
    /// Post-processing crashes (hours since start).
    pub software_crash_h: Vec<f64>,
    /// Cryostat failures forcing an early evaporation (hours since start).
    pub cryostat_failure_h: Vec<f64>,
    pub loss_steps: Vec<LossStep>,
}

impl FaultSchedule {
    /// Whether a software crash falls inside `[t0_s, t1_s)`.
    pub fn crash_in(&self, t0_s: f64, t1_s: f64) -> bool {
        self.software_crash_h.iter().any(|&h| (t0_s..t1_s).contains(&(h * 3600.0)))
    }
}

/// Interval during which the detectors are warm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blackout {
    pub start_s: f64,
    pub end_s: f64,
    /// Started by a cryostat failure rather than the regular schedule.
    pub forced: bool,
}

/// Evaporation cycles over `[0, duration_s)`. A forced evaporation restarts
/// the regular period from its own start.
pub fn blackout_schedule(det: &DetectorModel, faults: &FaultSchedule, duration_s: f64) -> Vec<Blackout> {
    let len = det.evaporation_duration_h * 3600.0;
    let period = det.evaporation_period_h * 3600.0;
    let mut forced: Vec<f64> = faults.cryostat_failure_h.iter().map(|h| h * 3600.0).collect();
    forced.sort_by(f64::total_cmp);
    let mut forced = forced.into_iter().peekable();
    let mut next = det.evaporation.then_some(det.first_evaporation_h * 3600.0);
    let mut out: Vec<Blackout> = Vec::new();
    loop {
        let f = forced.peek().copied();
        let (start, is_forced) = match (next, f) {
            (Some(n), Some(f)) if f < n => (f, true),
            (Some(n), _) => (n, false),
            (None, Some(f)) => (f, true),
            (None, None) => break,
        };
        if start >= duration_s {
            break;
        }
        if is_forced {
            forced.next();
        }
        if out.last().is_some_and(|b| start < b.end_s) {
            // already warm
        } else {
            out.push(Blackout { start_s: start, end_s: start + len, forced: is_forced });
        }
        if det.evaporation {
            next = Some(start + period);
        }
    }
    out
}

/// Blackout covering `t_s`, if any.
pub fn blackout_at(schedule: &[Blackout], t_s: f64) -> Option<&Blackout> {
    let i = schedule.partition_point(|b| b.start_s <= t_s);
    i.checked_sub(1).map(|i| &schedule[i]).filter(|b| t_s < b.end_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_evaporation_resets_the_period() {
        let det = DetectorModel::default();
        let faults = FaultSchedule { cryostat_failure_h: vec![280.0], ..Default::default() };
        let s = blackout_schedule(&det, &faults, 325.0 * 3600.0);
        let starts: Vec<f64> = s.iter().map(|b| b.start_s / 3600.0).collect();
        assert_eq!(starts, vec![24.0, 72.0, 120.0, 168.0, 216.0, 264.0, 280.0]);
        assert!(s[6].forced && !s[5].forced);
        assert!(blackout_at(&s, 280.5 * 3600.0).is_some_and(|b| b.forced));
        assert!(blackout_at(&s, 281.5 * 3600.0).is_none());
        assert!(blackout_at(&s, 10.0).is_none());
    }

    #[test]
    fn without_faults_follows_the_detector_schedule() {
        let det = DetectorModel::default();
        let s = blackout_schedule(&det, &FaultSchedule::default(), 325.0 * 3600.0);
        assert_eq!(s.len(), 7);
        for m in 0..(325 * 12) {
            let t = m as f64 * 300.0 + 1.0;
            assert_eq!(blackout_at(&s, t).is_some(), det.in_evaporation(t), "t={t}");
        }
        let off = DetectorModel { evaporation: false, ..det };
        assert!(blackout_schedule(&off, &FaultSchedule::default(), 1e7).is_empty());
    }
}
