use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use super::faults::{blackout_at, blackout_schedule, Blackout, FaultSchedule};
use super::profile::CascadeProfile;
use crate::cascade::{CascadeConfig, InstanceTiming};
use crate::control::{
    phase_controller_step, polarization_controller_step, pump_controller_step, watchdog_step, ControlMode, DetectorStatus,
    Directive, Downtime, PhaseConfig, PhaseController, PipelineStatus, PolarizationConfig, PolarizationController,
    PumpConfig, PumpController, WatchdogConfig, WatchdogInput, WatchdogState,
};
use crate::linksim::{
    link_rates, rng_stream, sample_histogram, sample_tick, ClockTrajectory, LinkRates, PeakShape, PolarizationTrajectory,
    RateInputs, TickCounts,
};
use crate::model::{LinkScenario, PolarizationModel, Station, TelemetryRecord};
use crate::pa::{secrecy_budget, FiniteKeyParams};
use crate::sift::{qber_confidence, SiftConfig};
use crate::sync::{acquisition_with, ClockDiscipline, PeakEstimate, SyncConfig, SyncEngine, SyncEvent};
use crate::{Error, Result};

/// How clock synchronisation is simulated in rate-level runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncModel {
    /// A coincidence histogram is drawn for every tracking integration and
    /// fed to the tracking loop; clock trajectories are simulated.
    Histogram,
    /// Tracking is assumed exact once locked; only acquisitions draw histograms.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSwitches {
    pub pump: bool,
    pub phase: bool,
    pub polarization: bool,
}

impl Default for ControlSwitches {
    fn default() -> Self {
        Self { pump: true, phase: true, polarization: true }
    }
}

/// Configuration of a rate-level run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub duration_s: f64,
    pub tick_s: f64,
    /// One telemetry row per this many ticks.
    pub telemetry_every_ticks: u32,
    pub sync_model: SyncModel,
    pub sync: SyncConfig,
    pub sift: SiftConfig,
    pub cascade: CascadeConfig,
    pub cascade_block_bits: usize,
    pub cascade_timing: InstanceTiming,
    /// Concurrent Cascade instances.
    pub max_parallel: usize,
    /// Blocks waiting for a Cascade instance; further blocks are dropped.
    pub max_queue: usize,
    pub pa_block_bits: u64,
    pub eps_sec: f64,
    pub eps_cor: f64,
    pub pump: PumpConfig,
    pub phase: PhaseConfig,
    pub polarization: PolarizationConfig,
    pub watchdog: WatchdogConfig,
    pub controllers: ControlSwitches,
    /// Start with the interferometer phase already compensated, skipping the
    /// cold-start phase scan.
    pub warm_start: bool,
    pub faults: FaultSchedule,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            duration_s: 3600.0,
            tick_s: 1.0,
            telemetry_every_ticks: 1,
            sync_model: SyncModel::Analytic,
            sync: SyncConfig::default(),
            sift: SiftConfig::default(),
            cascade: CascadeConfig::default(),
            cascade_block_bits: 16_384,
            cascade_timing: InstanceTiming::default(),
            max_parallel: 1,
            max_queue: 600,
            pa_block_bits: 1_000_000,
            eps_sec: 1e-9,
            eps_cor: 1e-15,
            pump: PumpConfig::default(),
            phase: PhaseConfig::default(),
            polarization: PolarizationConfig::default(),
            watchdog: WatchdogConfig::default(),
            controllers: ControlSwitches::default(),
            warm_start: false,
            faults: FaultSchedule::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, path: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be positive, got {v}")))
            }
        };
        pos(self.duration_s, "engine.duration_s")?;
        pos(self.tick_s, "engine.tick_s")?;
        pos(self.sync.integration_s, "engine.sync.integration_s")?;
        if !(self.sift.sample_fraction > 0.0 && self.sift.sample_fraction < 1.0) {
            return Err(Error::config("engine.sift.sample_fraction", "must lie in (0, 1)"));
        }
        if self.cascade_block_bits < 64 {
            return Err(Error::config("engine.cascade_block_bits", "must be at least 64"));
        }
        if self.max_parallel == 0 {
            return Err(Error::config("engine.max_parallel", "must be at least 1"));
        }
        if self.pa_block_bits == 0 {
            return Err(Error::config("engine.pa_block_bits", "must be positive"));
        }
        if self.telemetry_every_ticks == 0 {
            return Err(Error::config("engine.telemetry_every_ticks", "must be at least 1"));
        }
        self.cascade.validate().map_err(|e| Error::config("engine.cascade", e.to_string()))
    }
}

/// One accepted tracking update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncUpdate {
    pub t_s: f64,
    /// Peak displacement measured on the corrected stream.
    pub measured_ps: f64,
    /// Ground-truth residual at the same time (validation only).
    pub true_residual_ps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpUpdate {
    pub t_s: f64,
    pub qber_z: f64,
    pub interval_width: f64,
    pub attenuation_db: f64,
    pub mode: ControlMode,
}

/// One privacy-amplification block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaRecord {
    pub t_s: f64,
    pub n_z: u64,
    pub n_x: u64,
    pub e_x: f64,
    pub qber_z: f64,
    pub leak_ec: u64,
    pub budget_bits: f64,
    pub secret_bits: u64,
}

/// Outcome of a rate-level run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunReport {
    pub duration_s: f64,
    pub secret_bits: u64,
    pub skr_bps: f64,
    /// Z-basis bits kept as key (disclosed sample excluded).
    pub key_bits: u64,
    pub sample_bits: u64,
    /// Matched X–X coincidences over the run.
    pub x_events: u64,
    pub reconciled_bits: u64,
    pub leaked_bits: u64,
    pub blocks_reconciled: u64,
    pub blocks_dropped: u64,
    pub blocks_failed: u64,
    pub mean_qber_z: f64,
    pub mean_qber_x: f64,
    pub mean_singles_a_hz: f64,
    pub mean_singles_b_hz: f64,
    pub producing_s: f64,
    pub duty_cycle: f64,
    pub restarts: u32,
    pub downtime: Vec<Downtime>,
    pub evaporation_cycles: usize,
    pub halted: bool,
    pub acquisitions: u32,
    pub acquisition_failures: u32,
    pub sync_updates: Vec<SyncUpdate>,
    /// Seconds from each phase scan start to the first window below 5 % QBERx.
    pub phase_lock_times_s: Vec<f64>,
    pub pump_updates: Vec<PumpUpdate>,
    pub pa_blocks: Vec<PaRecord>,
    pub telemetry: Vec<TelemetryRecord>,
}

impl RunReport {
    pub fn max_abs_sync_residual_ps(&self) -> f64 {
        self.sync_updates.iter().map(|u| u.measured_ps.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SyncState {
    Idle,
    Acquiring { ready_s: f64, peak: Option<PeakEstimate> },
    Locked,
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    bits: u64,
    errors: u64,
    sample_n: u64,
    sample_k: u64,
    x_n: u64,
    x_k: u64,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    arrival_s: f64,
    bits: u64,
    errors: u64,
    x_n: u64,
    x_k: u64,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    end_s: f64,
    block: Pending,
    leak: u64,
    verified: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct PaAcc {
    bits: u64,
    errors: u64,
    leak: u64,
    x_n: u64,
    x_k: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Window {
    n: u64,
    k: u64,
    start_s: f64,
    len_s: f64,
    open: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct TeleAcc {
    ticks: u32,
    span_s: f64,
    zz: u64,
    zz_err: u64,
    xx: u64,
    xx_err: u64,
    singles_a: u64,
    singles_b: u64,
    central: u64,
    reconciled: u64,
}

/// Tick-based two-station engine driven by expected rates. Controllers and
/// the watchdog see only measured counts; the physics sees their actuators.
pub struct RateEngine {
    sc: LinkScenario,
    cfg: EngineConfig,
    profile: Arc<CascadeProfile>,
    rng: ChaCha8Rng,
    base: RateInputs,
    schedule: Vec<Blackout>,
    pol_a: PolarizationTrajectory,
    pol_b: PolarizationTrajectory,
    clock_a: ClockTrajectory,
    clock_b: ClockTrajectory,
    shape: PeakShape,
    t: f64,
    ticks: u64,
    loss_step: usize,
    pump: PumpController,
    phase: PhaseController,
    pol_ctrl: [PolarizationController; 2],
    watchdog: WatchdogState,
    sync: SyncState,
    engine: SyncEngine,
    checkpoint: Option<ClockDiscipline>,
    sync_lost: bool,
    active: bool,
    cold: bool,
    scan_started_s: Option<f64>,
    last_xx_hz: f64,
    pump_win: Window,
    phase_win: Window,
    pol_acc: [(u64, f64); 2],
    partial: Partial,
    queue: VecDeque<Pending>,
    workers: Vec<f64>,
    inflight: Vec<InFlight>,
    pa: PaAcc,
    last_secret_fraction: f64,
    tele: TeleAcc,
    totals: TeleAcc,
    report: RunReport,
}

fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid p").sample(rng)
    }
}

/// Errors among `draw` items taken without replacement from `total` with `bad` errors.
fn hyper<R: Rng>(total: u64, bad: u64, draw: u64, rng: &mut R) -> u64 {
    if draw == 0 || bad == 0 {
        0
    } else if draw >= total {
        bad
    } else {
        match Hypergeometric::new(total, bad, draw) {
            Ok(h) => h.sample(rng),
            // large populations underflow the exact sampler; binomial is indistinguishable there
            Err(_) => binomial(draw, bad as f64 / total as f64, rng).clamp(draw.saturating_sub(total - bad), bad.min(draw)),
        }
    }
}

impl RateEngine {
    pub fn new(sc: LinkScenario, cfg: EngineConfig, profile: Arc<CascadeProfile>) -> Result<Self> {
        sc.validate()?;
        cfg.validate()?;
        if profile.points.is_empty() {
            return Err(Error::Argument("empty Cascade profile".into()));
        }
        let seed = sc.seed;
        let base = RateInputs::from_scenario(&sc, sc.pump_attenuation_db, 1.0, 1.0, 0.0);
        let schedule = blackout_schedule(&sc.detector, &cfg.faults, cfg.duration_s);
        let phase0 = -(sc.phase_a.initial_phase_rad + sc.phase_b.initial_phase_rad);
        let report = RunReport {
            evaporation_cycles: schedule.len(),
            ..Default::default()
        };
        Ok(Self {
            rng: rng_stream(seed, 0x5241_5445),
            pol_a: PolarizationTrajectory::new(sc.polarization_a.clone(), rng_stream(seed, 5)),
            pol_b: PolarizationTrajectory::new(sc.polarization_b.clone(), rng_stream(seed, 6)),
            clock_a: ClockTrajectory::new(sc.clock_a.clone(), rng_stream(seed, 3)),
            clock_b: ClockTrajectory::new(sc.clock_b.clone(), rng_stream(seed, 4)),
            shape: PeakShape {
                sigma_ps: std::f64::consts::SQRT_2 * sc.detector.jitter_ps,
                side_offset_ps: sc.z_delay_ps as f64,
            },
            t: 0.0,
            ticks: 0,
            loss_step: 0,
            pump: PumpController::new(cfg.pump, sc.pump_attenuation_db),
            phase: PhaseController::new(cfg.phase, if cfg.controllers.phase && !cfg.warm_start { 0.0 } else { phase0 }),
            pol_ctrl: [
                PolarizationController::new(cfg.polarization, 0.0),
                PolarizationController::new(cfg.polarization, 0.0),
            ],
            watchdog: WatchdogState::cold_start(cfg.watchdog),
            sync: SyncState::Idle,
            engine: SyncEngine::new(cfg.sync.clone()),
            checkpoint: None,
            sync_lost: false,
            active: false,
            cold: true,
            scan_started_s: None,
            last_xx_hz: 0.0,
            pump_win: Window::default(),
            phase_win: Window::default(),
            pol_acc: [(0, 0.0); 2],
            partial: Partial::default(),
            queue: VecDeque::new(),
            workers: vec![0.0; cfg.max_parallel],
            inflight: Vec::new(),
            pa: PaAcc::default(),
            last_secret_fraction: 0.0,
            tele: TeleAcc::default(),
            totals: TeleAcc::default(),
            report,
            base,
            schedule,
            sc,
            cfg,
            profile,
        })
    }

    pub fn now_s(&self) -> f64 {
        self.t
    }

    pub fn watchdog(&self) -> &WatchdogState {
        &self.watchdog
    }

    pub fn pump_attenuation_db(&self) -> f64 {
        self.pump.attenuation_db
    }

    pub fn phase_controller(&self) -> &PhaseController {
        &self.phase
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.cfg.duration_s - 1e-9
    }

    /// Runs to the configured duration.
    pub fn run(mut self) -> Result<RunReport> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.finish())
    }

    fn true_offset_ps(&mut self, t_s: f64) -> f64 {
        self.clock_b.offset_ps(t_s) - self.clock_a.offset_ps(t_s)
    }

    /// Residual seen by the pipeline: truth minus the correction in use.
    fn residual_ps(&mut self, t_s: f64) -> f64 {
        if self.cfg.sync_model == SyncModel::Analytic {
            return 0.0;
        }
        let corr = match (&self.sync, self.engine.discipline()) {
            (SyncState::Locked, Some(d)) => d.correction_ps(t_s),
            _ => self.checkpoint.as_ref().map_or(0.0, |d| d.correction_ps(t_s)),
        };
        self.true_offset_ps(t_s) - corr
    }

    fn applied_phase(&self) -> f64 {
        if self.cfg.controllers.phase {
            self.phase.applied_phase()
        } else {
            self.phase.phase_rad
        }
    }

    fn applied_polarization(&self, i: usize) -> f64 {
        if self.cfg.controllers.polarization {
            self.pol_ctrl[i].applied_angle()
        } else {
            self.pol_ctrl[i].angle_rad
        }
    }

    fn rates_at(&mut self, t_s: f64, dark: bool) -> LinkRates {
        let floor = self.sc.detector.polarization_floor();
        let mult = |traj: &mut PolarizationTrajectory, act: f64| {
            if traj.model().enabled {
                PolarizationModel::multiplier(traj.angle_rad(t_s) - act, floor)
            } else {
                1.0
            }
        };
        let (act_a, act_b) = (self.applied_polarization(0), self.applied_polarization(1));
        let m_a = mult(&mut self.pol_a, act_a);
        let m_b = mult(&mut self.pol_b, act_b);
        let phase_err = self.sc.phase_a.phase_rad(t_s) + self.sc.phase_b.phase_rad(t_s) + self.applied_phase();
        let residual = match self.sync {
            SyncState::Locked => self.residual_ps(t_s),
            _ => 0.0,
        };
        let mut inp = RateInputs {
            pair_rate_hz: self.sc.pair_rate_at(self.pump.attenuation_db),
            eta_a: self.base.eta_a * m_a,
            eta_b: self.base.eta_b * m_b,
            phase_error_rad: phase_err,
            timing_offset_ps: residual,
            ..self.base
        };
        if dark {
            inp.eta_a = 0.0;
            inp.eta_b = 0.0;
            inp.dark_rate_hz = 0.0;
        }
        link_rates(&inp)
    }

    fn apply_loss_steps(&mut self, t_s: f64) {
        while let Some(step) = self.cfg.faults.loss_steps.get(self.loss_step) {
            if step.time_s > t_s {
                break;
            }
            self.sc.extra_loss_db = step.extra_loss_db;
            self.base.eta_a = self.sc.arm_transmission(Station::Alice);
            self.base.eta_b = self.sc.arm_transmission(Station::Bob);
            self.loss_step += 1;
        }
    }

    /// Draws acquisition histograms at doubling integrations until a peak is found.
    fn acquire(&mut self, rates: &LinkRates, t_s: f64) -> (f64, Option<PeakEstimate>) {
        let acq = self.cfg.sync.acquisition.clone();
        let peak_cfg = self.cfg.sync.peak.clone();
        let max = self.cfg.sync.max_integration_s;
        let mut dur = self.cfg.sync.integration_s.min(max);
        loop {
            let shape = self.shape;
            let res = acquisition_with(&acq, &peak_cfg, |params| {
                let mut rng = self.rng.clone();
                let h = sample_histogram(rates, shape, params, t_s, dur, |t| self.residual_ps(t), &mut rng);
                self.rng = rng;
                Ok(h)
            });
            match res {
                Ok(a) => {
                    let peak = PeakEstimate { time_s: t_s + dur / 2.0, ..a.peak };
                    return (dur, Some(peak));
                }
                Err(_) if dur >= max - 1e-9 => return (dur, None),
                Err(_) => dur = (dur * 2.0).min(max),
            }
        }
    }

    fn lock_sync(&mut self, peak: PeakEstimate) {
        self.engine = match (&self.checkpoint, self.cfg.sync_model) {
            (Some(cp), SyncModel::Histogram) => {
                let mut d = cp.clone();
                d.offset_ps = cp.correction_ps(peak.time_s) + peak.position_ps;
                d.ref_time_s = peak.time_s;
                d.consecutive_failures = 0;
                d.acquisition_mode = false;
                SyncEngine::with_discipline(self.cfg.sync.clone(), d)
            }
            _ => {
                let mut e = SyncEngine::new(self.cfg.sync.clone());
                e.lock(peak);
                e
            }
        };
        self.report.acquisitions += 1;
        self.sync = SyncState::Locked;
    }

    fn track_sync(&mut self, rates: &LinkRates, t0: f64, dt: f64) -> Result<()> {
        if self.cfg.sync_model != SyncModel::Histogram || self.sync != SyncState::Locked {
            return Ok(());
        }
        let n = ((dt / self.cfg.sync.integration_s).round() as usize).max(1);
        let sub = dt / n as f64;
        for i in 0..n {
            let start = t0 + i as f64 * sub;
            let params = self.cfg.sync.histogram.clone();
            let mut rng = self.rng.clone();
            let shape = self.shape;
            let h = sample_histogram(rates, shape, &params, start, sub, |t| self.residual_ps(t), &mut rng);
            self.rng = rng;
            match self.engine.track_histogram(h)? {
                SyncEvent::Updated(p) => {
                    let truth = self.residual_before_update(p.time_s, p.position_ps);
                    self.report.sync_updates.push(SyncUpdate { t_s: p.time_s, measured_ps: p.position_ps, true_residual_ps: truth });
                    self.checkpoint = self.engine.discipline().cloned();
                }
                SyncEvent::LockLost => {
                    self.sync = SyncState::Idle;
                    self.sync_lost = true;
                    return Ok(());
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Ground-truth residual under the correction that produced the histogram.
    fn residual_before_update(&mut self, t_s: f64, measured_ps: f64) -> f64 {
        let after = self.engine.discipline().map_or(0.0, |d| d.correction_ps(t_s));
        // the update moved the correction by exactly the measured displacement
        self.true_offset_ps(t_s) - (after - measured_ps)
    }

    fn handle(&mut self, d: Directive, rates: &LinkRates, t_s: f64) {
        match d {
            Directive::StopPipeline => {
                self.active = false;
                self.sync = SyncState::Idle;
                self.partial = Partial::default();
                self.pump_win = Window::default();
                self.phase_win = Window::default();
                if self.watchdog.downtime.last().is_some_and(|x| x.cause == crate::control::DowntimeCause::Software) {
                    // the crashed process loses its in-memory blocks
                    self.queue.clear();
                    self.inflight.clear();
                    for w in &mut self.workers {
                        *w = t_s;
                    }
                }
            }
            Directive::ReacquireSync => {
                let (dur, peak) = self.acquire(rates, t_s);
                if peak.is_none() {
                    self.report.acquisition_failures += 1;
                }
                self.sync = SyncState::Acquiring { ready_s: t_s + dur, peak };
            }
            Directive::RelockPhase => {
                if self.cfg.controllers.phase && !(self.cold && self.cfg.warm_start) {
                    self.phase.start_scan();
                    self.scan_started_s = Some(t_s);
                    self.phase_win = Window::default();
                }
            }
            Directive::ResumeSifting => {
                self.active = true;
                self.cold = false;
            }
            Directive::Halt => {
                self.active = false;
                self.sync = SyncState::Idle;
                self.report.halted = true;
            }
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.tick_s.min(self.cfg.duration_s - self.t);
        let (t0, t1) = (self.t, self.t + dt);
        let tm = t0 + dt / 2.0;
        self.apply_loss_steps(t0);
        let blackout = blackout_at(&self.schedule, tm).copied();
        let dark = blackout.is_some();
        let rates = self.rates_at(tm, dark);
        let counts = sample_tick(&rates, dt, &mut self.rng);

        if let SyncState::Acquiring { ready_s, peak } = self.sync {
            if t0 >= ready_s - 1e-9 {
                match peak {
                    Some(p) => self.lock_sync(p),
                    None => {
                        self.sync = SyncState::Idle;
                        self.sync_lost = true;
                    }
                }
            }
        }
        self.track_sync(&rates, t0, dt)?;

        let producing = self.active && self.sync == SyncState::Locked && !self.report.halted;
        if producing {
            self.sift(&counts, t0, t1);
            if !dark {
                self.report.producing_s += dt;
            }
        } else {
            self.phase_win = Window::default();
            self.pump_win = Window::default();
        }
        self.polarization(&counts, dark, t1);
        self.schedule_cascade(t1);

        let input = WatchdogInput {
            t_s: t1,
            singles_a_hz: counts.singles_a as f64 / dt,
            singles_b_hz: counts.singles_b as f64 / dt,
            producing_key: producing,
            software_fault: self.cfg.faults.crash_in(t0, t1),
            sync_lost: std::mem::take(&mut self.sync_lost),
            detectors: DetectorStatus { warm: dark, cryostat_fault: blackout.is_some_and(|b| b.forced) },
        };
        if !self.report.halted {
            let (w, directives) = watchdog_step(&self.watchdog, &input);
            self.watchdog = w;
            for d in directives {
                self.handle(d, &rates, t1);
            }
        }
        self.telemetry(&counts, dt, producing, t1);
        self.t = t1;
        self.ticks += 1;
        Ok(())
    }

    fn sift(&mut self, c: &TickCounts, t0: f64, t1: f64) {
        let f = self.cfg.sift.sample_fraction;
        let s_n = binomial(c.zz, f, &mut self.rng);
        let s_k = hyper(c.zz, c.zz_err, s_n, &mut self.rng);
        let p = &mut self.partial;
        p.bits += c.zz - s_n;
        p.errors += c.zz_err - s_k;
        p.sample_n += s_n;
        p.sample_k += s_k;
        p.x_n += c.xx;
        p.x_k += c.xx_err;
        self.report.key_bits += c.zz - s_n;
        self.report.sample_bits += s_n;
        self.totals.zz += c.zz;
        self.totals.zz_err += c.zz_err;
        self.totals.xx += c.xx;
        self.totals.xx_err += c.xx_err;

        let b = self.cfg.cascade_block_bits as u64;
        while self.partial.bits >= b {
            let p = self.partial;
            let errors = hyper(p.bits, p.errors, b, &mut self.rng);
            let block = Pending { arrival_s: t1, bits: b, errors, x_n: p.x_n, x_k: p.x_k };
            self.partial = Partial { bits: p.bits - b, errors: p.errors - errors, ..Partial::default() };
            if self.queue.len() >= self.cfg.max_queue {
                self.report.blocks_dropped += 1;
            } else {
                self.queue.push_back(block);
            }
        }

        let dt = t1 - t0;
        if self.cfg.controllers.phase {
            let w = &mut self.phase_win;
            if !w.open {
                let rate = if self.last_xx_hz > 0.0 { self.last_xx_hz } else { c.xx as f64 / dt };
                *w = Window { n: 0, k: 0, start_s: t0, len_s: self.phase.window_s(rate), open: true };
            }
            w.n += c.xx;
            w.k += c.xx_err;
            if t1 - w.start_s >= w.len_s - 1e-9 {
                let w = std::mem::take(&mut self.phase_win);
                self.last_xx_hz = w.n as f64 / (t1 - w.start_s);
                if let Ok(est) = qber_confidence(w.n, w.k) {
                    let was_locked = self.phase.mode == ControlMode::Locked;
                    self.phase = phase_controller_step(&self.phase, &est, t1);
                    if was_locked && est.estimate < 0.05 {
                        if let Some(s) = self.scan_started_s.take() {
                            self.report.phase_lock_times_s.push(t1 - s);
                        }
                    }
                    if self.phase.relock_requested {
                        self.phase.start_scan();
                        self.scan_started_s = Some(t1);
                    }
                }
            }
        }
        let phase_ready = !self.cfg.controllers.phase || self.phase.mode == ControlMode::Locked;
        if self.cfg.controllers.pump && phase_ready {
            let w = &mut self.pump_win;
            if !w.open {
                *w = Window { n: 0, k: 0, start_s: t0, len_s: self.cfg.pump.window_s, open: true };
            }
            w.n += s_n;
            w.k += s_k;
            if t1 - w.start_s >= w.len_s - 1e-9 {
                if let Ok(est) = qber_confidence(w.n, w.k) {
                    self.pump = pump_controller_step(&self.pump, &est, t1);
                    self.report.pump_updates.push(PumpUpdate {
                        t_s: t1,
                        qber_z: est.estimate,
                        interval_width: est.width(),
                        attenuation_db: self.pump.attenuation_db,
                        mode: self.pump.mode,
                    });
                    // a held estimate keeps integrating, up to a hundred windows
                    if self.pump.mode != ControlMode::Held || t1 - w.start_s > 100.0 * w.len_s {
                        self.pump_win = Window::default();
                    }
                } else {
                    self.pump_win = Window::default();
                }
            }
        }
    }

    fn polarization(&mut self, c: &TickCounts, dark: bool, t1: f64) {
        if !self.cfg.controllers.polarization || self.report.halted {
            return;
        }
        let dt = self.cfg.tick_s;
        for (i, n) in [c.singles_a, c.singles_b].into_iter().enumerate() {
            let acc = &mut self.pol_acc[i];
            acc.0 += n;
            acc.1 += dt;
            if acc.1 >= self.cfg.polarization.interval_s - 1e-9 {
                let rate = acc.0 as f64 / acc.1;
                *acc = (0, 0.0);
                self.pol_ctrl[i] = polarization_controller_step(&self.pol_ctrl[i], rate, dark, t1);
            }
        }
    }

    fn schedule_cascade(&mut self, t1: f64) {
        let timing = self.cfg.cascade_timing;
        while let Some(front) = self.queue.front().copied() {
            let (wi, free) = self
                .workers
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one worker");
            let start = free.max(front.arrival_s);
            if start >= t1 {
                break;
            }
            self.queue.pop_front();
            let q = front.errors as f64 / front.bits as f64;
            let pt = self.profile.at(q);
            let dur = pt.rounds * timing.rtt_s + front.bits as f64 * timing.per_bit_s;
            self.workers[wi] = start + dur;
            let verified = self.rng.random::<f64>() < pt.verified_fraction;
            let leak = (pt.leak_fraction * front.bits as f64).round() as u64;
            self.inflight.push(InFlight { end_s: start + dur, block: front, leak, verified });
        }
        let mut done: Vec<InFlight> = Vec::new();
        self.inflight.retain(|f| {
            if f.end_s <= t1 {
                done.push(*f);
                false
            } else {
                true
            }
        });
        done.sort_by(|a, b| a.end_s.total_cmp(&b.end_s));
        for f in done {
            self.report.leaked_bits += f.leak;
            if !f.verified {
                self.report.blocks_failed += 1;
                continue;
            }
            self.report.blocks_reconciled += 1;
            self.report.reconciled_bits += f.block.bits;
            self.tele.reconciled += f.block.bits;
            self.pa.bits += f.block.bits;
            self.pa.errors += f.block.errors;
            self.pa.leak += f.leak;
            self.pa.x_n += f.block.x_n;
            self.pa.x_k += f.block.x_k;
            if self.pa.bits >= self.cfg.pa_block_bits {
                self.amplify(f.end_s);
            }
        }
    }

    fn amplify(&mut self, t_s: f64) {
        let a = std::mem::take(&mut self.pa);
        if a.bits == 0 {
            return;
        }
        let e_x = if a.x_n > 0 { (a.x_k as f64 / a.x_n as f64).min(0.5) } else { 0.5 };
        let p = FiniteKeyParams {
            eps_sec: self.cfg.eps_sec,
            eps_cor: self.cfg.eps_cor,
            n_z: a.bits,
            n_x: a.x_n,
            e_x,
            leak_ec: a.leak as f64,
            f_ec: 0.0,
        };
        let budget = secrecy_budget(&p).ok().flatten().unwrap_or(f64::NEG_INFINITY);
        let secret = if budget > 0.0 { budget.floor() as u64 } else { 0 };
        self.report.secret_bits += secret;
        self.last_secret_fraction = secret as f64 / a.bits as f64;
        self.report.pa_blocks.push(PaRecord {
            t_s,
            n_z: a.bits,
            n_x: a.x_n,
            e_x,
            qber_z: a.errors as f64 / a.bits as f64,
            leak_ec: a.leak,
            budget_bits: budget.max(-1e300),
            secret_bits: secret,
        });
    }

    fn telemetry(&mut self, c: &TickCounts, dt: f64, producing: bool, t1: f64) {
        let a = &mut self.tele;
        a.ticks += 1;
        a.span_s += dt;
        a.singles_a += c.singles_a;
        a.singles_b += c.singles_b;
        a.central += c.central;
        if producing {
            a.zz += c.zz;
            a.zz_err += c.zz_err;
            a.xx += c.xx;
            a.xx_err += c.xx_err;
        }
        self.totals.singles_a += c.singles_a;
        self.totals.singles_b += c.singles_b;
        self.totals.span_s += dt;
        if a.ticks < self.cfg.telemetry_every_ticks && !self.is_last_tick(t1) {
            return;
        }
        let a = std::mem::take(&mut self.tele);
        let ratio = |k: u64, n: u64| if n > 0 { (k as f64 / n as f64).min(0.5) } else { 0.5 };
        let state = if self.report.halted {
            PipelineStatus::Halted
        } else {
            self.watchdog.status
        };
        let residual = self.report.sync_updates.last().map_or(0.0, |u| u.measured_ps);
        let rec = TelemetryRecord {
            wall_time_s: t1,
            qber_z: ratio(a.zz_err, a.zz),
            qber_x: ratio(a.xx_err, a.xx),
            singles_a_hz: a.singles_a as f64 / a.span_s,
            singles_b_hz: a.singles_b as f64 / a.span_s,
            coincidences_hz: a.central as f64 / a.span_s,
            clock_residual_ps: residual,
            skr_bps: a.reconciled as f64 * self.last_secret_fraction / a.span_s,
            pump_attenuation_db: self.pump.attenuation_db,
            phase_a_rad: 0.0,
            phase_b_rad: crate::control::wrap_phase(self.applied_phase()),
            polarization_a_rad: self.applied_polarization(0),
            polarization_b_rad: self.applied_polarization(1),
            pipeline_state: serde_json::to_value(state)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            restarts: self.watchdog.restarts,
            secret_bits_total: self.report.secret_bits,
        };
        self.report.telemetry.push(rec);
    }

    fn is_last_tick(&self, t1: f64) -> bool {
        t1 >= self.cfg.duration_s - 1e-9
    }

    /// Closes the run: amplifies the remaining reconciled bits and fills totals.
    pub fn finish(mut self) -> RunReport {
        self.amplify(self.t);
        let mut r = std::mem::take(&mut self.report);
        let tot = self.totals;
        r.duration_s = self.t;
        r.skr_bps = if self.t > 0.0 { r.secret_bits as f64 / self.t } else { 0.0 };
        r.mean_qber_z = if tot.zz > 0 { tot.zz_err as f64 / tot.zz as f64 } else { 0.0 };
        r.x_events = tot.xx;
        r.mean_qber_x = if tot.xx > 0 { tot.xx_err as f64 / tot.xx as f64 } else { 0.0 };
        r.mean_singles_a_hz = tot.singles_a as f64 / tot.span_s.max(1e-12);
        r.mean_singles_b_hz = tot.singles_b as f64 / tot.span_s.max(1e-12);
        r.duty_cycle = if self.t > 0.0 { r.producing_s / self.t } else { 0.0 };
        r.restarts = self.watchdog.restarts;
        r.downtime = self.watchdog.downtime.clone();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn profile() -> Arc<CascadeProfile> {
        static P: OnceLock<Arc<CascadeProfile>> = OnceLock::new();
        P.get_or_init(|| {
            Arc::new(
                CascadeProfile::measure(16_384, &CascadeConfig::default(), &CascadeProfile::default_grid(), 1, 7).unwrap(),
            )
        })
        .clone()
    }

    fn scenario() -> LinkScenario {
        let mut sc = LinkScenario::default();
        sc.detector.evaporation = false;
        sc
    }

    #[test]
    fn cold_start_counts_one_restart_and_produces_key() {
        let cfg = EngineConfig { duration_s: 600.0, ..Default::default() };
        let r = RateEngine::new(scenario(), cfg, profile()).unwrap().run().unwrap();
        assert_eq!(r.restarts, 1);
        assert!(r.downtime.is_empty());
        assert!(r.secret_bits > 0, "{r:?}");
        assert!(r.duty_cycle > 0.9);
        assert_eq!(r.telemetry.len(), 600);
        assert!(r.telemetry.iter().all(|t| t.is_consistent()));
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = EngineConfig { duration_s: 120.0, sync_model: SyncModel::Histogram, tick_s: 0.5, ..Default::default() };
        let a = RateEngine::new(scenario(), cfg.clone(), profile()).unwrap().run().unwrap();
        let b = RateEngine::new(scenario(), cfg, profile()).unwrap().run().unwrap();
        assert_eq!(a, b);
        assert!(!a.sync_updates.is_empty());
    }

    #[test]
    fn evaporation_blackout_is_detected_and_recovered() {
        let mut sc = scenario();
        sc.detector.evaporation = true;
        sc.detector.first_evaporation_h = 0.1;
        sc.detector.evaporation_duration_h = 0.05;
        let cfg = EngineConfig { duration_s: 1200.0, ..Default::default() };
        let r = RateEngine::new(sc, cfg, profile()).unwrap().run().unwrap();
        assert_eq!(r.evaporation_cycles, 1);
        assert_eq!(r.restarts, 2);
        assert_eq!(r.downtime.len(), 1);
        let d = r.downtime[0];
        assert!((d.start_s - 360.0).abs() <= 1.0, "{d:?}");
        assert!(d.end_s.unwrap() > 540.0 + 65.0);
    }
}
