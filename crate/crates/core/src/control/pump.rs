use serde::{Deserialize, Serialize};

use super::ControlMode;
use crate::sift::QberEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpConfig {
    pub set_point: f64,
    /// Attenuation change per unit of QBERz error.
    pub gain_db: f64,
    pub max_step_db: f64,
    pub min_attenuation_db: f64,
    pub max_attenuation_db: f64,
    /// Integration window of one QBERz estimate.
    pub window_s: f64,
    /// Estimates with a wider 95 % interval hold the actuator.
    pub max_interval_width: f64,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self {
            set_point: 0.043,
            gain_db: 50.0,
            max_step_db: 0.5,
            min_attenuation_db: 0.0,
            max_attenuation_db: 40.0,
            window_s: 10.0,
            max_interval_width: 0.01,
        }
    }
}

/// Pump attenuation loop that regulates QBERz through the pair rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpController {
    pub cfg: PumpConfig,
    pub attenuation_db: f64,
    pub mode: ControlMode,
    pub last_update_s: f64,
}

impl PumpController {
    pub fn new(cfg: PumpConfig, attenuation_db: f64) -> Self {
        Self {
            cfg,
            attenuation_db: attenuation_db.clamp(cfg.min_attenuation_db, cfg.max_attenuation_db),
            mode: ControlMode::Searching,
            last_update_s: 0.0,
        }
    }
}

/// Integral step: more attenuation when QBERz is above the set-point.
pub fn pump_controller_step(state: &PumpController, est: &QberEstimate, t_s: f64) -> PumpController {
    let mut next = *state;
    next.last_update_s = t_s;
    let cfg = &state.cfg;
    if est.n == 0 || est.upper - est.lower > cfg.max_interval_width {
        next.mode = ControlMode::Held;
        return next;
    }
    let err = est.estimate - cfg.set_point;
    let step = (cfg.gain_db * err).clamp(-cfg.max_step_db, cfg.max_step_db);
    next.attenuation_db = (state.attenuation_db + step).clamp(cfg.min_attenuation_db, cfg.max_attenuation_db);
    next.mode = if est.lower <= cfg.set_point && cfg.set_point <= est.upper {
        ControlMode::Locked
    } else {
        ControlMode::Searching
    };
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sift::qber_confidence;

    #[test]
    fn zero_error_leaves_actuator_unchanged() {
        let s = PumpController::new(PumpConfig::default(), 5.0);
        let est = qber_confidence(1_000_000, 43_000).unwrap();
        let n = pump_controller_step(&s, &est, 10.0);
        assert_eq!(n.attenuation_db, 5.0);
        assert_eq!(n.mode, ControlMode::Locked);
    }

    #[test]
    fn direction_clamp_and_hold() {
        let s = PumpController::new(PumpConfig::default(), 5.0);
        let high = pump_controller_step(&s, &qber_confidence(1_000_000, 60_000).unwrap(), 1.0);
        assert!((high.attenuation_db - 5.5).abs() < 1e-12);
        let low = pump_controller_step(&s, &qber_confidence(1_000_000, 40_000).unwrap(), 1.0);
        assert!((low.attenuation_db - 4.85).abs() < 1e-9);
        let wide = pump_controller_step(&s, &qber_confidence(100, 10).unwrap(), 1.0);
        assert_eq!(wide.mode, ControlMode::Held);
        assert_eq!(wide.attenuation_db, 5.0);
        let floor = PumpController::new(PumpConfig::default(), 0.1);
        assert_eq!(pump_controller_step(&floor, &qber_confidence(1_000_000, 0).unwrap(), 1.0).attenuation_db, 0.0);
    }
}
