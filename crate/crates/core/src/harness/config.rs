use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::calibration::Anchor;
use crate::model::{DriftStep, LinkScenario};
use crate::pa::SkrModel;
use crate::pipeline::{CascadeProfile, EngineConfig, FaultSchedule, StationConfig};
use crate::{Error, Result};

/// Named experiments the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Endurance,
    LossSweep,
    ChannelSweep,
    SyncStress,
    SingleLink,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Endurance,
        Experiment::LossSweep,
        Experiment::ChannelSweep,
        Experiment::SyncStress,
        Experiment::SingleLink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Endurance => "endurance",
            Experiment::LossSweep => "loss_sweep",
            Experiment::ChannelSweep => "channel_sweep",
            Experiment::SyncStress => "sync_stress",
            Experiment::SingleLink => "single_link",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown experiment `{s}`")))
    }
}

/// Field anchors fitted before any experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub enabled: bool,
    pub anchors: Vec<Anchor>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { enabled: true, anchors: vec![Anchor { loss_db: 20.0, skr_bps: 7069.0 }] }
    }
}

/// How the Cascade cost table is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSettings {
    pub trials: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self { trials: 8, seed: 1, grid: CascadeProfile::default_grid() }
    }
}

/// Long unattended run with evaporation cycles and injected faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnduranceSettings {
    pub duration_h: f64,
    /// Channel loss; `None` keeps the scenario's.
    pub loss_db: Option<f64>,
    pub telemetry_every_ticks: u32,
    pub faults: FaultSchedule,
    pub expect_restarts: Option<u32>,
    pub min_evaporations: Option<usize>,
    /// Accepted range of `1 − SKR / SKR_reference`.
    pub deficit_range: Option<[f64; 2]>,
    pub skr_range_bps: Option<[f64; 2]>,
}

impl Default for EnduranceSettings {
    fn default() -> Self {
        Self {
            duration_h: 325.0,
            loss_db: None,
            telemetry_every_ticks: 60,
            faults: FaultSchedule { software_crash_h: vec![125.0], cryostat_failure_h: vec![280.0], loss_steps: Vec::new() },
            expect_restarts: Some(9),
            min_evaporations: Some(7),
            deficit_range: Some([0.005, 0.02]),
            skr_range_bps: None,
        }
    }
}

/// Short rate-level runs across channel losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSweepSettings {
    pub losses_db: Vec<f64>,
    /// Simulated seconds per loss point.
    pub run_s: f64,
    pub tick_s: f64,
    /// Losses probed with and without the Cascade instance cap.
    pub ceiling_losses_db: Vec<f64>,
    pub ceiling_run_s: f64,
    /// Instance count standing in for "no cap".
    pub uncapped_parallel: usize,
}

impl Default for LossSweepSettings {
    fn default() -> Self {
        Self {
            losses_db: vec![
                15.0, 20.0, 25.0, 30.0, 33.5, 35.0, 40.0, 45.0, 50.0, 52.0, 54.0, 55.0, 56.0, 56.6, 57.0, 58.0, 59.0, 60.0,
                61.0, 62.0,
            ],
            run_s: 600.0,
            tick_s: 0.5,
            ceiling_losses_db: vec![0.0, 5.0, 10.0],
            ceiling_run_s: 300.0,
            uncapped_parallel: 1024,
        }
    }
}

/// Key production across the DWDM slot pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSweepSettings {
    pub slots: Vec<u8>,
    /// Channel loss; `None` keeps the scenario's.
    pub loss_db: Option<f64>,
    pub run_s: f64,
    pub tick_s: f64,
    pub expect_key_slots: Option<usize>,
    pub expect_dead_slots: Option<Vec<u8>>,
}

impl Default for ChannelSweepSettings {
    fn default() -> Self {
        Self {
            slots: (1..=40).collect(),
            loss_db: None,
            run_s: 120.0,
            tick_s: 0.5,
            expect_key_slots: Some(36),
            expect_dead_slots: Some(vec![1, 2, 25, 26]),
        }
    }
}

/// Histogram-level clock tracking, nominal and under drift perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncStressSettings {
    pub duration_s: f64,
    pub tick_s: f64,
    /// Channel loss; `None` keeps the scenario's.
    pub loss_db: Option<f64>,
    /// Extra drift of Bob's clock in the perturbed run.
    pub perturbations: Vec<DriftStep>,
    pub nominal_limit_ps: f64,
    pub perturbed_limit_ps: f64,
}

impl Default for SyncStressSettings {
    fn default() -> Self {
        let step = |start_s: f64, duration_s: f64, extra: f64| DriftStep { start_s, duration_s, extra_drift_ps_per_s: extra };
        Self {
            duration_s: 3600.0,
            tick_s: 0.5,
            loss_db: None,
            perturbations: vec![step(600.0, 60.0, 20.0), step(1500.0, 30.0, -40.0), step(2400.0, 300.0, 5.0)],
            nominal_limit_ps: 12.0,
            perturbed_limit_ps: 40.0,
        }
    }
}

/// Tag-level run of both station engines over a classical channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleLinkSettings {
    /// Channel loss; `None` keeps the scenario's.
    pub loss_db: Option<f64>,
    /// Overrides the calibrated pair rate, which keeps tag-level runs tractable.
    pub pair_rate_hz: Option<f64>,
}

impl Default for SingleLinkSettings {
    fn default() -> Self {
        Self { loss_db: Some(25.0), pair_rate_hz: Some(2e8) }
    }
}

/// Everything an experiment reads. Every section is optional in TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: LinkScenario,
    pub engine: EngineConfig,
    pub station: StationConfig,
    pub skr: SkrModel,
    pub calibration: CalibrationSettings,
    pub profile: ProfileSettings,
    pub endurance: EnduranceSettings,
    pub loss_sweep: LossSweepSettings,
    pub channel_sweep: ChannelSweepSettings,
    pub sync_stress: SyncStressSettings,
    pub single_link: SingleLinkSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: LinkScenario::default(),
            engine: EngineConfig::default(),
            station: StationConfig { duration_s: 20.0, block_bits: 4096, ..Default::default() },
            skr: SkrModel::default(),
            calibration: CalibrationSettings::default(),
            profile: ProfileSettings::default(),
            endurance: EnduranceSettings::default(),
            loss_sweep: LossSweepSettings::default(),
            channel_sweep: ChannelSweepSettings::default(),
            sync_stress: SyncStressSettings::default(),
            single_link: SingleLinkSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = crate::error::from_toml(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.engine.validate()?;
        self.station.validate()?;
        let pos = |v: f64, path: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be positive, got {v}")))
            }
        };
        pos(self.endurance.duration_h, "endurance.duration_h")?;
        pos(self.loss_sweep.run_s, "loss_sweep.run_s")?;
        pos(self.loss_sweep.tick_s, "loss_sweep.tick_s")?;
        pos(self.loss_sweep.ceiling_run_s, "loss_sweep.ceiling_run_s")?;
        pos(self.channel_sweep.run_s, "channel_sweep.run_s")?;
        pos(self.channel_sweep.tick_s, "channel_sweep.tick_s")?;
        pos(self.sync_stress.duration_s, "sync_stress.duration_s")?;
        pos(self.sync_stress.tick_s, "sync_stress.tick_s")?;
        if self.endurance.telemetry_every_ticks == 0 {
            return Err(Error::config("endurance.telemetry_every_ticks", "must be at least 1"));
        }
        if self.loss_sweep.uncapped_parallel == 0 {
            return Err(Error::config("loss_sweep.uncapped_parallel", "must be at least 1"));
        }
        if self.profile.grid.is_empty() || self.profile.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("profile.grid", "must be non-empty and strictly increasing"));
        }
        if self.calibration.enabled && self.calibration.anchors.is_empty() {
            return Err(Error::config("calibration.anchors", "at least one anchor is required"));
        }
        for &l in self.loss_sweep.losses_db.iter().chain(&self.loss_sweep.ceiling_losses_db) {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config("loss_sweep.losses_db", format!("invalid loss {l}")));
            }
        }
        for &s in &self.channel_sweep.slots {
            self.scenario.plan.slot(s).map_err(|e| Error::config("channel_sweep.slots", e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_reports_field_paths() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        let err = ExperimentConfig::from_toml_str("[loss_sweep]\nrun_s = \"long\"\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "loss_sweep.run_s"), "{err}");
        let err = ExperimentConfig::from_toml_str("[endurance]\nhours = 3\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path.starts_with("endurance")), "{err}");
        let err = ExperimentConfig::from_toml_str("[sync_stress]\ntick_s = -1.0\n").unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "sync_stress.tick_s"), "{err}");
    }

    #[test]
    fn experiment_names_parse() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("fig8".parse::<Experiment>().is_err());
    }
}
