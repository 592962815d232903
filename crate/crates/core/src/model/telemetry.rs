use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::Result;

/// Version tag of the CSV column layout below.
pub const TELEMETRY_SCHEMA: &str = "telemetry.v1";

/// One telemetry row. Field order is the CSV column order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub wall_time_s: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    pub coincidences_hz: f64,
    pub clock_residual_ps: f64,
    pub skr_bps: f64,
    pub pump_attenuation_db: f64,
    pub phase_a_rad: f64,
    pub phase_b_rad: f64,
    pub polarization_a_rad: f64,
    pub polarization_b_rad: f64,
    pub pipeline_state: String,
    pub restarts: u32,
    pub secret_bits_total: u64,
}

impl TelemetryRecord {
    /// Checks the physical ranges every emitted row must satisfy.
    pub fn is_consistent(&self) -> bool {
        let frac = |v: f64| (0.0..=0.5).contains(&v);
        frac(self.qber_z)
            && frac(self.qber_x)
            && self.singles_a_hz >= 0.0
            && self.singles_b_hz >= 0.0
            && self.coincidences_hz >= 0.0
            && self.skr_bps >= 0.0
            && self.pump_attenuation_db >= 0.0
    }
}

/// CSV sink for telemetry rows.
pub struct TelemetryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(w: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, rec: &TelemetryRecord) -> Result<()> {
        self.inner.serialize(rec).map_err(|e| crate::Error::Io(std::io::Error::other(e)))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
