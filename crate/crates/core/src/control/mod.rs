//! Stabilization loops and the watchdog.
//!
//! Every controller is a pure step function of its state and of telemetry
//! derived from detections (QBER estimates, singles). None of them can see
//! simulator ground truth, so replaying a telemetry log reproduces the
//! actuator trace exactly.

mod phase;
mod polarization;
mod pump;
mod watchdog;

use serde::{Deserialize, Serialize};

pub use phase::{phase_controller_step, PhaseConfig, PhaseController};
pub use polarization::{polarization_controller_step, PolarizationConfig, PolarizationController};
pub use pump::{pump_controller_step, PumpConfig, PumpController};
pub use watchdog::{
    watchdog_step, DetectorStatus, Directive, Downtime, DowntimeCause, PipelineStatus, WatchdogConfig, WatchdogInput,
    WatchdogState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Locked,
    Searching,
    Held,
}

/// Wraps a phase into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    phi.rem_euclid(std::f64::consts::TAU)
}

/// Signed distance between two phases in `(−π, π]`.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = wrap_phase(a - b);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}
