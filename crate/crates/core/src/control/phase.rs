use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{wrap_phase, ControlMode};
use crate::sift::QberEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub dither_rad: f64,
    /// Newton-like gain on the finite-difference QBERx slope.
    pub gain: f64,
    pub max_step_rad: f64,
    /// Steps smaller than this many standard errors of the slope are skipped.
    pub deadband_sigma: f64,
    pub abort_threshold: f64,
    /// Time above the abort threshold before a re-lock is requested.
    pub abort_timeout_s: f64,
    /// X-basis events wanted per dither half-window.
    pub target_events: f64,
    pub min_window_s: f64,
    pub max_window_s: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            dither_rad: 0.07,
            gain: 2.0,
            max_step_rad: 0.5,
            deadband_sigma: 1.0,
            abort_threshold: 0.11,
            abort_timeout_s: 600.0,
            target_events: 50_000.0,
            min_window_s: 0.005,
            max_window_s: 300.0,
        }
    }
}

/// Dither-and-descend loop on Bob's interferometer phase.
///
/// While `Searching` it first probes four phases a quarter turn apart and
/// jumps to the minimum of the fitted sinusoid, then dithers around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseController {
    pub cfg: PhaseConfig,
    /// Centre of the dither.
    pub phase_rad: f64,
    pub mode: ControlMode,
    /// +1 or −1: side of the dither being measured.
    pub dither_sign: i8,
    pub q_plus: Option<QberEstimate>,
    /// QBERx at each probe phase of an ongoing scan.
    pub scan: Vec<f64>,
    pub above_since_s: Option<f64>,
    /// Set once QBERx stayed above the abort threshold for too long.
    pub relock_requested: bool,
    pub last_update_s: f64,
}

impl PhaseController {
    pub fn new(cfg: PhaseConfig, phase_rad: f64) -> Self {
        Self {
            cfg,
            phase_rad: wrap_phase(phase_rad),
            mode: ControlMode::Locked,
            dither_sign: 1,
            q_plus: None,
            scan: Vec::new(),
            above_since_s: None,
            relock_requested: false,
            last_update_s: 0.0,
        }
    }

    /// Restarts from a four-point scan.
    pub fn start_scan(&mut self) {
        self.mode = ControlMode::Searching;
        self.scan.clear();
        self.q_plus = None;
        self.dither_sign = 1;
        self.above_since_s = None;
        self.relock_requested = false;
    }

    /// Phase to apply during the next window.
    pub fn applied_phase(&self) -> f64 {
        if self.mode == ControlMode::Searching {
            wrap_phase(self.phase_rad + self.scan.len() as f64 * FRAC_PI_2)
        } else {
            wrap_phase(self.phase_rad + self.dither_sign as f64 * self.cfg.dither_rad)
        }
    }

    /// Window length for the observed X-basis event rate.
    pub fn window_s(&self, xx_rate_hz: f64) -> f64 {
        if !(xx_rate_hz > 0.0) {
            return self.cfg.max_window_s;
        }
        (self.cfg.target_events / xx_rate_hz).clamp(self.cfg.min_window_s, self.cfg.max_window_s)
    }
}

/// Consumes the QBERx measured over the last window at [`PhaseController::applied_phase`].
pub fn phase_controller_step(state: &PhaseController, est: &QberEstimate, t_s: f64) -> PhaseController {
    let mut s = state.clone();
    s.last_update_s = t_s;
    if est.n == 0 {
        return s;
    }
    if s.mode == ControlMode::Searching {
        s.scan.push(est.estimate);
        if s.scan.len() == 4 {
            // q(θ) = a − b cos(θ − θ0) sampled at quarter turns.
            let (mut c, mut sn) = (0.0, 0.0);
            for (k, q) in s.scan.iter().enumerate() {
                let th = k as f64 * FRAC_PI_2;
                c += q * th.cos();
                sn += q * th.sin();
            }
            s.phase_rad = wrap_phase(s.phase_rad + (-sn).atan2(-c));
            s.scan.clear();
            s.mode = ControlMode::Locked;
            s.dither_sign = 1;
        }
        return s;
    }
    if s.dither_sign > 0 {
        s.q_plus = Some(*est);
        s.dither_sign = -1;
        return s;
    }
    s.dither_sign = 1;
    let Some(qp) = s.q_plus.take() else { return s };
    let d = 2.0 * s.cfg.dither_rad;
    let slope = (qp.estimate - est.estimate) / d;
    let var = |q: &QberEstimate| {
        let p = q.estimate.clamp(1e-6, 1.0 - 1e-6);
        p * (1.0 - p) / q.n as f64
    };
    let se = (var(&qp) + var(est)).sqrt() / d;
    if slope.abs() > s.cfg.deadband_sigma * se {
        let step = (-s.cfg.gain * slope).clamp(-s.cfg.max_step_rad, s.cfg.max_step_rad);
        s.phase_rad = wrap_phase(s.phase_rad + step);
    }
    let mean = (qp.estimate + est.estimate) / 2.0;
    if mean > s.cfg.abort_threshold {
        let since = *s.above_since_s.get_or_insert(t_s);
        if t_s - since >= s.cfg.abort_timeout_s {
            s.relock_requested = true;
        }
    } else {
        s.above_since_s = None;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::phase_distance;

    fn exact(q: f64) -> QberEstimate {
        QberEstimate { n: 1_000_000_000, k: (q * 1e9) as u64, estimate: q, lower: q, upper: q }
    }

    fn qber(phase_err: f64) -> f64 {
        0.02 + (1.0 - 0.99 * phase_err.cos()) / 2.0
    }

    fn run(mut c: PhaseController, optimum: f64, windows: usize) -> PhaseController {
        for i in 0..windows {
            let q = qber(c.applied_phase() - optimum);
            c = phase_controller_step(&c, &exact(q), i as f64);
        }
        c
    }

    #[test]
    fn descends_from_a_quarter_turn() {
        let c = run(PhaseController::new(PhaseConfig::default(), FRAC_PI_2), 0.0, 12);
        assert!(phase_distance(c.phase_rad, 0.0).abs() < 0.02, "{}", c.phase_rad);
    }

    #[test]
    fn scan_lands_near_the_optimum_from_anywhere() {
        for start in [0.3, 2.0, 3.1, 5.5] {
            let mut c = PhaseController::new(PhaseConfig::default(), start);
            c.start_scan();
            let c = run(c, 1.0, 4);
            assert_eq!(c.mode, ControlMode::Locked);
            assert!(phase_distance(c.phase_rad, 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stays_put_at_the_minimum() {
        let c = run(PhaseController::new(PhaseConfig::default(), 0.0), 0.0, 40);
        assert!(phase_distance(c.phase_rad, 0.0).abs() <= c.cfg.dither_rad);
    }

    #[test]
    fn requests_relock_after_timeout() {
        let mut c = PhaseController::new(PhaseConfig { abort_timeout_s: 10.0, ..Default::default() }, 0.0);
        for i in 0..30 {
            c = phase_controller_step(&c, &exact(0.3), i as f64);
        }
        assert!(c.relock_requested);
    }
}
