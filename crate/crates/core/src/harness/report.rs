use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::calibration::CalibrationReport;
use super::config::Experiment;
use crate::model::{TelemetryRecord, TelemetryWriter};
use crate::{Error, Result};

/// Version tag of the summary JSON layout.
pub const SUMMARY_SCHEMA: &str = "summary.v1";

/// One self-reported acceptance check: `lower ≤ value ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Self { name: name.into(), value, lower, upper, pass }
    }

    pub fn range(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self::within(name, value, Some(lower), Some(upper))
    }

    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    /// Strictly positive value.
    pub fn positive(name: impl Into<String>, value: f64) -> Self {
        let mut c = Self::within(name, value, Some(0.0), None);
        c.pass &= value > 0.0;
        c
    }

    pub fn equals(name: impl Into<String>, value: f64, expected: f64) -> Self {
        Self::range(name, value, expected, expected)
    }

    /// Boolean condition recorded as 1 (true) or 0.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::equals(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

/// Headline metrics common to every experiment. Sweeps average over their points.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Headline {
    pub mean_skr_bps: f64,
    pub mean_qber_z: f64,
    pub mean_qber_x: f64,
    pub max_sync_residual_ps: f64,
    pub restarts: u32,
    pub downtime_s: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub experiment: Experiment,
    pub seed: u64,
    pub time_scale: f64,
    pub headline: Headline,
    /// Experiment-specific scalars.
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub calibration: Option<CalibrationReport>,
    pub passed: bool,
    /// Files written next to the summary.
    pub files: Vec<String>,
}

impl Summary {
    pub fn new(experiment: Experiment, seed: u64, time_scale: f64) -> Self {
        Self {
            schema: SUMMARY_SCHEMA,
            experiment,
            seed,
            time_scale,
            headline: Headline::default(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            calibration: None,
            passed: true,
            files: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
        self.passed = self.checks.iter().all(|c| c.pass);
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_telemetry(path: &Path, rows: &[TelemetryRecord]) -> Result<()> {
    let mut w = TelemetryWriter::new(BufWriter::new(File::create(path)?));
    for r in rows {
        w.write(r)?;
    }
    w.flush()
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(s.to_json().as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_evaluate_bounds() {
        assert!(Check::range("a", 1.0, 0.5, 2.0).pass);
        assert!(!Check::range("a", 3.0, 0.5, 2.0).pass);
        assert!(!Check::at_most("a", f64::NAN, 1.0).pass);
        assert!(Check::positive("p", 1e-9).pass && !Check::positive("p", 0.0).pass);
        assert!(Check::equals("r", 9.0, 9.0).pass && !Check::holds("h", false).pass);
        let mut s = Summary::new(Experiment::SyncStress, 1, 1000.0);
        s.check(Check::holds("x", true));
        assert!(s.passed);
        s.check(Check::holds("y", false));
        assert!(!s.passed);
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["schema"], SUMMARY_SCHEMA);
        assert_eq!(v["experiment"], "sync_stress");
    }
}
