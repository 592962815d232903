use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::loss_to_transmission;
use super::plan::{channel_pair_transmission, ChannelPlan};
use super::tag::Station;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub jitter_ps: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ps: u64,
    pub polarization_penalty_max_db: f64,
    /// Scheduled evaporation (regeneration) cycles; `false` disables them.
    pub evaporation: bool,
    pub evaporation_period_h: f64,
    pub evaporation_duration_h: f64,
    pub first_evaporation_h: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 0.8,
            jitter_ps: 30.0,
            dark_rate_hz: 100.0,
            dead_time_ps: 20_000,
            polarization_penalty_max_db: 6.0,
            evaporation: true,
            evaporation_period_h: 48.0,
            evaporation_duration_h: 1.0,
            first_evaporation_h: 24.0,
        }
    }
}

impl DetectorModel {
    /// Whether a scheduled evaporation blacks out the detectors at time `t_s`.
    pub fn in_evaporation(&self, t_s: f64) -> bool {
        if !self.evaporation || t_s < self.first_evaporation_h * 3600.0 {
            return false;
        }
        let since = t_s - self.first_evaporation_h * 3600.0;
        since.rem_euclid(self.evaporation_period_h * 3600.0) < self.evaporation_duration_h * 3600.0
    }

    /// Worst-case polarization efficiency multiplier.
    pub fn polarization_floor(&self) -> f64 {
        10f64.powf(-self.polarization_penalty_max_db / 10.0)
    }
}

/// Extra frequency error applied over `[start_s, start_s + duration_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftStep {
    pub start_s: f64,
    pub duration_s: f64,
    pub extra_drift_ps_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockModel {
    pub initial_offset_ps: f64,
    pub frequency_error_ps_per_s: f64,
    pub random_walk_ps_per_sqrt_s: f64,
    pub perturbations: Vec<DriftStep>,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self {
            initial_offset_ps: 0.0,
            frequency_error_ps_per_s: 7.0,
            random_walk_ps_per_sqrt_s: 1.0,
            perturbations: Vec::new(),
        }
    }
}

impl ClockModel {
    /// A perfect reference clock.
    pub fn ideal() -> Self {
        Self {
            initial_offset_ps: 0.0,
            frequency_error_ps_per_s: 0.0,
            random_walk_ps_per_sqrt_s: 0.0,
            perturbations: Vec::new(),
        }
    }

    /// Deterministic part of the offset (excludes the random walk).
    pub fn deterministic_offset_ps(&self, t_s: f64) -> f64 {
        let steps: f64 = self
            .perturbations
            .iter()
            .map(|p| p.extra_drift_ps_per_s * (t_s - p.start_s).clamp(0.0, p.duration_s))
            .sum();
        self.initial_offset_ps + self.frequency_error_ps_per_s * t_s + steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseJump {
    pub time_s: f64,
    pub delta_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseModel {
    pub initial_phase_rad: f64,
    pub drift_rate_rad_per_s: f64,
    pub visibility: f64,
    pub fsr_ghz: f64,
    pub jumps: Vec<PhaseJump>,
}

impl Default for PhaseModel {
    fn default() -> Self {
        Self::alice()
    }
}

impl PhaseModel {
    pub fn alice() -> Self {
        Self {
            initial_phase_rad: 0.0,
            drift_rate_rad_per_s: 6.5e-7,
            visibility: 0.997,
            fsr_ghz: 2.51310,
            jumps: Vec::new(),
        }
    }

    pub fn bob() -> Self {
        Self {
            drift_rate_rad_per_s: 4.7e-7,
            fsr_ghz: 2.51309,
            ..Self::alice()
        }
    }

    /// Uncompensated interferometer phase at `t_s`.
    pub fn phase_rad(&self, t_s: f64) -> f64 {
        let jumps: f64 = self.jumps.iter().filter(|j| j.time_s <= t_s).map(|j| j.delta_rad).sum();
        self.initial_phase_rad + self.drift_rate_rad_per_s * t_s + jumps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolarizationModel {
    pub enabled: bool,
    /// Time for the state to rotate by a quarter turn (full extinction of the aligned component).
    pub rotation_time_h: f64,
    pub initial_angle_rad: f64,
    pub random_walk_rad_per_sqrt_h: f64,
}

impl Default for PolarizationModel {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_time_h: 10.0,
            initial_angle_rad: 0.0,
            random_walk_rad_per_sqrt_h: 0.2,
        }
    }
}

impl PolarizationModel {
    /// Efficiency multiplier for misalignment `theta`, between `floor` and 1.
    pub fn multiplier(theta: f64, floor: f64) -> f64 {
        floor + (1.0 - floor) * theta.cos().powi(2)
    }
}

/// Complete physical configuration of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkScenario {
    /// Pairs/s emitted into one 100 GHz slot pair at the spectrum center, pump unattenuated.
    pub pair_rate_hz: f64,
    /// Initial setting of the pump attenuator.
    pub pump_attenuation_db: f64,
    pub spectrum_fwhm_nm: f64,
    pub slot: u8,
    pub plan: ChannelPlan,
    /// Source-to-fiber coupling efficiency per arm.
    pub collection_efficiency: f64,
    pub fiber_loss_a_db: f64,
    pub fiber_loss_b_db: f64,
    /// Additional attenuation, split equally between the arms.
    pub extra_loss_db: f64,
    /// Analyzer insertion loss (interferometer and basis optics) per station.
    pub analyzer_loss_a_db: f64,
    pub analyzer_loss_b_db: f64,
    pub z_delay_ps: u64,
    pub coincidence_window_ps: u64,
    pub detector: DetectorModel,
    pub clock_a: ClockModel,
    pub clock_b: ClockModel,
    pub phase_a: PhaseModel,
    pub phase_b: PhaseModel,
    pub polarization_a: PolarizationModel,
    pub polarization_b: PolarizationModel,
    pub seed: u64,
}

impl Default for LinkScenario {
    fn default() -> Self {
        Self {
            pair_rate_hz: 1.0e9,
            pump_attenuation_db: 5.0,
            spectrum_fwhm_nm: 80.0,
            slot: 5,
            plan: ChannelPlan::default(),
            collection_efficiency: 0.5,
            fiber_loss_a_db: 10.0,
            fiber_loss_b_db: 10.0,
            extra_loss_db: 0.0,
            analyzer_loss_a_db: 0.6,
            analyzer_loss_b_db: 0.5,
            z_delay_ps: 400,
            coincidence_window_ps: 120,
            detector: DetectorModel::default(),
            clock_a: ClockModel::ideal(),
            clock_b: ClockModel::default(),
            phase_a: PhaseModel::alice(),
            phase_b: PhaseModel::bob(),
            polarization_a: PolarizationModel::default(),
            polarization_b: PolarizationModel {
                initial_angle_rad: 0.0,
                ..PolarizationModel::default()
            },
            seed: 1,
        }
    }
}

impl LinkScenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = crate::error::from_toml(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, path: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be finite and non-negative, got {v}")))
            }
        };
        let frac = |v: f64, path: &str| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(path, format!("must lie in (0, 1], got {v}")))
            }
        };
        if !(self.pair_rate_hz > 0.0) {
            return Err(Error::config("pair_rate_hz", "must be positive"));
        }
        nonneg(self.pump_attenuation_db, "pump_attenuation_db")?;
        nonneg(self.fiber_loss_a_db, "fiber_loss_a_db")?;
        nonneg(self.fiber_loss_b_db, "fiber_loss_b_db")?;
        nonneg(self.extra_loss_db, "extra_loss_db")?;
        nonneg(self.analyzer_loss_a_db, "analyzer_loss_a_db")?;
        nonneg(self.analyzer_loss_b_db, "analyzer_loss_b_db")?;
        if !(self.spectrum_fwhm_nm > 0.0) {
            return Err(Error::config("spectrum_fwhm_nm", "must be positive"));
        }
        frac(self.collection_efficiency, "collection_efficiency")?;
        frac(self.detector.efficiency, "detector.efficiency")?;
        nonneg(self.detector.jitter_ps, "detector.jitter_ps")?;
        nonneg(self.detector.dark_rate_hz, "detector.dark_rate_hz")?;
        nonneg(self.detector.polarization_penalty_max_db, "detector.polarization_penalty_max_db")?;
        if self.detector.evaporation
            && !(self.detector.evaporation_period_h > self.detector.evaporation_duration_h
                && self.detector.evaporation_duration_h >= 0.0)
        {
            return Err(Error::config(
                "detector.evaporation_period_h",
                "period must exceed the evaporation duration",
            ));
        }
        for (name, p) in [("phase_a", &self.phase_a), ("phase_b", &self.phase_b)] {
            if !(0.0..=1.0).contains(&p.visibility) {
                return Err(Error::config(format!("{name}.visibility"), "must lie in [0, 1]"));
            }
        }
        for (name, p) in [("polarization_a", &self.polarization_a), ("polarization_b", &self.polarization_b)] {
            if !(p.rotation_time_h > 0.0) {
                return Err(Error::config(format!("{name}.rotation_time_h"), "must be positive"));
            }
        }
        for (name, c) in [("clock_a", &self.clock_a), ("clock_b", &self.clock_b)] {
            nonneg(c.random_walk_ps_per_sqrt_s, &format!("{name}.random_walk_ps_per_sqrt_s"))?;
        }
        if self.coincidence_window_ps == 0 {
            return Err(Error::config("coincidence_window_ps", "must be positive"));
        }
        if self.z_delay_ps <= self.coincidence_window_ps {
            return Err(Error::config("z_delay_ps", "must exceed the coincidence window"));
        }
        self.plan.validate()?;
        self.plan.slot(self.slot).map_err(|e| Error::config("slot", e.to_string()))?;
        Ok(())
    }

    /// Quantum-channel loss between the stations: both fibers plus extra attenuation.
    pub fn channel_loss_db(&self) -> f64 {
        self.fiber_loss_a_db + self.fiber_loss_b_db + self.extra_loss_db
    }

    /// Sets the extra attenuation so the quantum-channel loss equals `total_db`.
    pub fn with_channel_loss(mut self, total_db: f64) -> Self {
        let fiber = self.fiber_loss_a_db + self.fiber_loss_b_db;
        if total_db >= fiber {
            self.extra_loss_db = total_db - fiber;
        } else {
            self.fiber_loss_a_db = total_db / 2.0;
            self.fiber_loss_b_db = total_db / 2.0;
            self.extra_loss_db = 0.0;
        }
        self
    }

    /// Total loss of one arm in dB, excluding spectral filtering and detectors.
    pub fn arm_loss_db(&self, station: Station) -> f64 {
        let (fiber, analyzer) = match station {
            Station::Alice => (self.fiber_loss_a_db, self.analyzer_loss_a_db),
            Station::Bob => (self.fiber_loss_b_db, self.analyzer_loss_b_db),
        };
        fiber + self.extra_loss_db / 2.0 + analyzer
    }

    /// Probability that a photon of the selected slot is detected with the
    /// polarization perfectly aligned.
    pub fn arm_transmission(&self, station: Station) -> f64 {
        let (t_a, t_b) = channel_pair_transmission(&self.plan, self.slot).expect("validated slot");
        let spectral = match station {
            Station::Alice => t_a,
            Station::Bob => t_b,
        };
        let fiber = loss_to_transmission(self.arm_loss_db(station)).expect("non-negative loss");
        self.collection_efficiency * spectral * fiber * self.detector.efficiency
    }

    /// Relative source brightness of the selected slot (Gaussian spectrum).
    pub fn spectral_weight(&self) -> f64 {
        let s = self.plan.slot(self.slot).expect("validated slot");
        let d = s.alice_nm() - self.plan.center_wavelength_nm();
        (-4.0 * 2f64.ln() * (d / self.spectrum_fwhm_nm).powi(2)).exp()
    }

    /// Pair rate into the selected slot for a given pump attenuation.
    pub fn pair_rate_at(&self, pump_attenuation_db: f64) -> f64 {
        self.pair_rate_hz * self.spectral_weight() * 10f64.powf(-pump_attenuation_db / 10.0)
    }

    pub fn clock(&self, station: Station) -> &ClockModel {
        match station {
            Station::Alice => &self.clock_a,
            Station::Bob => &self.clock_b,
        }
    }

    pub fn phase(&self, station: Station) -> &PhaseModel {
        match station {
            Station::Alice => &self.phase_a,
            Station::Bob => &self.phase_b,
        }
    }

    pub fn polarization(&self, station: Station) -> &PolarizationModel {
        match station {
            Station::Alice => &self.polarization_a,
            Station::Bob => &self.polarization_b,
        }
    }

    /// Noise-free variant: no darks, no jitter, no drifts, perfect visibility.
    pub fn noiseless(mut self) -> Self {
        self.detector.dark_rate_hz = 0.0;
        self.detector.jitter_ps = 0.0;
        self.detector.dead_time_ps = 0;
        self.detector.evaporation = false;
        self.clock_a = ClockModel::ideal();
        self.clock_b = ClockModel::ideal();
        for p in [&mut self.phase_a, &mut self.phase_b] {
            p.drift_rate_rad_per_s = 0.0;
            p.visibility = 1.0;
            p.initial_phase_rad = 0.0;
            p.jumps.clear();
        }
        self.polarization_a.enabled = false;
        self.polarization_b.enabled = false;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let sc = LinkScenario::default();
        let s = sc.to_toml_string();
        assert!(s.contains("fiber_loss_a_db") && s.contains("jitter_ps"));
        assert_eq!(LinkScenario::from_toml_str(&s).unwrap(), sc);
    }

    #[test]
    fn invalid_fields_report_their_path() {
        let err = LinkScenario::from_toml_str("[detector]\nefficiency = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("detector.efficiency"), "{err}");
        let err = LinkScenario::from_toml_str("bogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn evaporation_schedule() {
        let d = DetectorModel::default();
        assert!(!d.in_evaporation(23.9 * 3600.0));
        assert!(d.in_evaporation(24.5 * 3600.0));
        assert!(!d.in_evaporation(25.1 * 3600.0));
        assert!(d.in_evaporation(72.2 * 3600.0));
        let n = (0..325 * 60).filter(|m| d.in_evaporation(*m as f64 * 60.0) && !d.in_evaporation((*m as f64 - 1.0) * 60.0)).count();
        assert_eq!(n, 7);
    }

    #[test]
    fn clock_offset_with_perturbation() {
        let mut c = ClockModel::default();
        c.perturbations.push(DriftStep { start_s: 10.0, duration_s: 5.0, extra_drift_ps_per_s: 40.0 });
        assert_eq!(c.deterministic_offset_ps(10.0), 70.0);
        assert_eq!(c.deterministic_offset_ps(20.0), 140.0 + 200.0);
        assert_eq!(ClockModel::ideal().deterministic_offset_ps(1e6), 0.0);
    }

    #[test]
    fn channel_loss_setter() {
        let sc = LinkScenario::default().with_channel_loss(33.5);
        assert!((sc.channel_loss_db() - 33.5).abs() < 1e-12);
        let sc = LinkScenario::default().with_channel_loss(4.0);
        assert!((sc.channel_loss_db() - 4.0).abs() < 1e-12);
    }
}
