use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatchdogConfig {
    /// Blackout when singles fall below this fraction of their rolling median.
    pub blackout_fraction: f64,
    pub blackout_hold_s: f64,
    /// Recovery when singles climb back above this fraction of the median.
    pub recovery_fraction: f64,
    pub recovery_hold_s: f64,
    /// Detector settling time after a blackout before the pipeline restarts.
    pub warmup_s: f64,
    /// Process restart time after a software fault.
    pub software_restart_s: f64,
    pub median_window_s: f64,
    /// More than this many failures inside `failure_window_s` halts the link.
    pub max_failures: usize,
    pub failure_window_s: f64,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        Self {
            blackout_fraction: 0.01,
            blackout_hold_s: 5.0,
            recovery_fraction: 0.5,
            recovery_hold_s: 5.0,
            warmup_s: 60.0,
            software_restart_s: 30.0,
            median_window_s: 300.0,
            max_failures: 5,
            failure_window_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Running,
    Blackout,
    /// Waiting for warm-up or a process restart.
    Recovering,
    /// Restart directives issued; waiting for key production.
    Resuming,
    /// Needs an operator.
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DowntimeCause {
    Evaporation,
    Software,
    Cryostat,
    SyncLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Downtime {
    pub start_s: f64,
    pub end_s: Option<f64>,
    pub cause: DowntimeCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    StopPipeline,
    ReacquireSync,
    RelockPhase,
    ResumeSifting,
    Halt,
}

/// Detector housekeeping visible to the watchdog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectorStatus {
    /// Cryostat temperature above the superconducting threshold.
    pub warm: bool,
    pub cryostat_fault: bool,
}

/// One telemetry snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WatchdogInput {
    pub t_s: f64,
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    pub producing_key: bool,
    pub software_fault: bool,
    pub sync_lost: bool,
    pub detectors: DetectorStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchdogState {
    pub cfg: WatchdogConfig,
    pub status: PipelineStatus,
    /// Completed restart procedures.
    pub restarts: u32,
    pub downtime: Vec<Downtime>,
    history: VecDeque<(f64, f64, f64)>,
    below_since_s: Option<f64>,
    above_since_s: Option<f64>,
    ready_at_s: f64,
    failures: VecDeque<f64>,
}

impl WatchdogState {
    pub fn new(cfg: WatchdogConfig) -> Self {
        Self {
            cfg,
            status: PipelineStatus::Running,
            restarts: 0,
            downtime: Vec::new(),
            history: VecDeque::new(),
            below_since_s: None,
            above_since_s: None,
            ready_at_s: 0.0,
            failures: VecDeque::new(),
        }
    }

    /// A watchdog whose first step issues the restart directives, so the
    /// cold start runs the same procedure as every later restart.
    pub fn cold_start(cfg: WatchdogConfig) -> Self {
        Self {
            status: PipelineStatus::Recovering,
            ..Self::new(cfg)
        }
    }

    /// Rolling medians of the singles of both stations.
    pub fn medians(&self) -> Option<(f64, f64)> {
        if self.history.is_empty() {
            return None;
        }
        let med = |f: fn(&(f64, f64, f64)) -> f64| {
            let mut v: Vec<f64> = self.history.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        Some((med(|h| h.1), med(|h| h.2)))
    }

    /// Total closed downtime, seconds.
    pub fn downtime_s(&self) -> f64 {
        self.downtime.iter().filter_map(|d| d.end_s.map(|e| e - d.start_s)).sum()
    }

    /// Leaves `Halted` on operator request.
    pub fn operator_resume(&mut self, t_s: f64) {
        if self.status == PipelineStatus::Halted {
            self.failures.clear();
            self.status = PipelineStatus::Recovering;
            self.ready_at_s = t_s;
        }
    }

    fn fail(&mut self, t: f64, start: f64, cause: DowntimeCause, directives: &mut Vec<Directive>) {
        // a failure while still recovering extends the open outage
        match self.downtime.last() {
            Some(d) if d.end_s.is_none() => {}
            last => {
                let start = last.and_then(|d| d.end_s).map_or(start, |e| start.max(e));
                self.downtime.push(Downtime { start_s: start, end_s: None, cause });
            }
        }
        self.below_since_s = None;
        self.failures.push_back(t);
        while self.failures.front().is_some_and(|&f| t - f > self.cfg.failure_window_s) {
            self.failures.pop_front();
        }
        directives.push(Directive::StopPipeline);
        if self.failures.len() > self.cfg.max_failures {
            self.status = PipelineStatus::Halted;
            directives.push(Directive::Halt);
        }
    }
}

fn restart_directives(d: &mut Vec<Directive>) {
    d.extend([Directive::ReacquireSync, Directive::RelockPhase, Directive::ResumeSifting]);
}

/// Advances the watchdog by one telemetry snapshot.
pub fn watchdog_step(w: &WatchdogState, input: &WatchdogInput) -> (WatchdogState, Vec<Directive>) {
    let mut s = w.clone();
    let mut d = Vec::new();
    let t = input.t_s;
    let cfg = s.cfg;
    let dark = |frac: f64, s: &WatchdogState| match s.medians() {
        Some((ma, mb)) => input.singles_a_hz < frac * ma || input.singles_b_hz < frac * mb,
        None => false,
    };
    match s.status {
        PipelineStatus::Halted => {}
        PipelineStatus::Running => {
            if input.software_fault {
                s.fail(t, t, DowntimeCause::Software, &mut d);
                if s.status != PipelineStatus::Halted {
                    s.status = PipelineStatus::Recovering;
                    s.ready_at_s = t + cfg.software_restart_s;
                }
            } else if dark(cfg.blackout_fraction, &s) {
                let since = *s.below_since_s.get_or_insert(t);
                if t - since >= cfg.blackout_hold_s {
                    let cause = if input.detectors.cryostat_fault {
                        DowntimeCause::Cryostat
                    } else {
                        DowntimeCause::Evaporation
                    };
                    s.fail(t, since, cause, &mut d);
                    if s.status != PipelineStatus::Halted {
                        s.status = PipelineStatus::Blackout;
                    }
                    s.below_since_s = None;
                    s.above_since_s = None;
                }
            } else if input.sync_lost {
                s.below_since_s = None;
                s.fail(t, t, DowntimeCause::SyncLoss, &mut d);
                if s.status != PipelineStatus::Halted {
                    s.status = PipelineStatus::Resuming;
                    restart_directives(&mut d);
                }
            } else {
                s.below_since_s = None;
                if input.producing_key {
                    s.history.push_back((t, input.singles_a_hz, input.singles_b_hz));
                    while s.history.front().is_some_and(|h| t - h.0 > cfg.median_window_s) {
                        s.history.pop_front();
                    }
                }
            }
        }
        PipelineStatus::Blackout => {
            let back = !dark(cfg.recovery_fraction, &s) && !input.detectors.warm;
            if back {
                let since = *s.above_since_s.get_or_insert(t);
                if t - since >= cfg.recovery_hold_s {
                    s.status = PipelineStatus::Recovering;
                    s.ready_at_s = t + cfg.warmup_s;
                    s.above_since_s = None;
                }
            } else {
                s.above_since_s = None;
            }
        }
        PipelineStatus::Recovering => {
            if t >= s.ready_at_s {
                s.status = PipelineStatus::Resuming;
                restart_directives(&mut d);
            }
        }
        PipelineStatus::Resuming => {
            if input.sync_lost {
                s.fail(t, t, DowntimeCause::SyncLoss, &mut d);
                if s.status != PipelineStatus::Halted {
                    restart_directives(&mut d);
                }
            } else if input.producing_key {
                for open in s.downtime.iter_mut().filter(|x| x.end_s.is_none()) {
                    open.end_s = Some(t);
                }
                s.restarts += 1;
                s.status = PipelineStatus::Running;
            }
        }
    }
    (s, d)
}
