use serde::{Deserialize, Serialize};

use super::ControlMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolarizationConfig {
    pub dither_rad: f64,
    /// Gain on the normalized singles difference between dither sides.
    pub gain: f64,
    pub max_step_rad: f64,
    pub interval_s: f64,
}

impl Default for PolarizationConfig {
    fn default() -> Self {
        Self { dither_rad: 0.2, gain: 3.0, max_step_rad: 0.2, interval_s: 1.0 }
    }
}

/// Hill-climbing loop on one station's polarization actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationController {
    pub cfg: PolarizationConfig,
    pub angle_rad: f64,
    pub mode: ControlMode,
    pub dither_sign: i8,
    pub singles_plus: Option<f64>,
    pub last_update_s: f64,
}

impl PolarizationController {
    pub fn new(cfg: PolarizationConfig, angle_rad: f64) -> Self {
        Self { cfg, angle_rad, mode: ControlMode::Locked, dither_sign: 1, singles_plus: None, last_update_s: 0.0 }
    }

    pub fn applied_angle(&self) -> f64 {
        self.angle_rad + self.dither_sign as f64 * self.cfg.dither_rad
    }
}

/// Consumes the singles rate measured over the last interval at the applied angle.
pub fn polarization_controller_step(
    state: &PolarizationController,
    singles_hz: f64,
    dark: bool,
    t_s: f64,
) -> PolarizationController {
    let mut s = *state;
    s.last_update_s = t_s;
    if dark || !(singles_hz > 0.0) {
        s.mode = ControlMode::Held;
        s.dither_sign = 1;
        s.singles_plus = None;
        return s;
    }
    s.mode = ControlMode::Locked;
    if s.dither_sign > 0 {
        s.singles_plus = Some(singles_hz);
        s.dither_sign = -1;
        return s;
    }
    s.dither_sign = 1;
    if let Some(sp) = s.singles_plus.take() {
        let g = (sp - singles_hz) / (sp + singles_hz);
        s.angle_rad += (s.cfg.gain * g).clamp(-s.cfg.max_step_rad, s.cfg.max_step_rad);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singles(theta: f64, act: f64) -> f64 {
        let f = 10f64.powf(-0.6);
        1e5 * (f + (1.0 - f) * (theta - act).cos().powi(2))
    }

    #[test]
    fn climbs_to_the_maximum_and_holds_in_the_dark() {
        let mut c = PolarizationController::new(PolarizationConfig::default(), 0.0);
        for i in 0..200 {
            c = polarization_controller_step(&c, singles(0.9, c.applied_angle()), false, i as f64);
        }
        assert!((c.angle_rad - 0.9).abs() < 0.01, "{}", c.angle_rad);
        // Dither costs about 3 % of the peak singles.
        let m = singles(0.9, c.applied_angle()) / 1e5;
        assert!((0.95..0.99).contains(&m), "{m}");
        let held = polarization_controller_step(&c, 0.0, true, 201.0);
        assert_eq!((held.mode, held.angle_rad), (ControlMode::Held, c.angle_rad));
    }
}
