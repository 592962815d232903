use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::model::{LinkScenario, Station};

/// Uncorrelated coincidence rate `S_A·S_B·w`.
pub fn accidental_rate(singles_a_hz: f64, singles_b_hz: f64, window_ps: f64) -> f64 {
    singles_a_hz * singles_b_hz * window_ps * 1e-12
}

/// Inputs of the analytic rate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateInputs {
    /// Pairs/s entering the selected slot.
    pub pair_rate_hz: f64,
    /// Detection probability per photon, polarization included.
    pub eta_a: f64,
    pub eta_b: f64,
    pub dark_rate_hz: f64,
    pub window_ps: f64,
    pub jitter_ps: f64,
    pub dead_time_ps: f64,
    /// Two-photon Franson visibility.
    pub visibility: f64,
    /// Residual `φ_A + φ_B`.
    pub phase_error_rad: f64,
    /// Residual clock offset left by synchronisation; shifts the peak inside the window.
    #[serde(default)]
    pub timing_offset_ps: f64,
}

impl RateInputs {
    /// Inputs for a scenario at a given pump setting, polarization multipliers and phase error.
    pub fn from_scenario(sc: &LinkScenario, pump_attenuation_db: f64, pol_a: f64, pol_b: f64, phase_error_rad: f64) -> Self {
        Self {
            pair_rate_hz: sc.pair_rate_at(pump_attenuation_db),
            eta_a: sc.arm_transmission(Station::Alice) * pol_a,
            eta_b: sc.arm_transmission(Station::Bob) * pol_b,
            dark_rate_hz: sc.detector.dark_rate_hz,
            window_ps: sc.coincidence_window_ps as f64,
            jitter_ps: sc.detector.jitter_ps,
            dead_time_ps: sc.detector.dead_time_ps as f64,
            visibility: sc.phase_a.visibility * sc.phase_b.visibility,
            phase_error_rad,
            timing_offset_ps: 0.0,
        }
    }

    /// Fraction of true coincidences inside `±window/2` for two Gaussian
    /// jitters, with the peak displaced by the timing residual.
    pub fn window_fraction(&self) -> f64 {
        let half = self.window_ps / 2.0;
        let r = self.timing_offset_ps;
        if self.jitter_ps <= 0.0 {
            return if r.abs() < half { 1.0 } else { 0.0 };
        }
        let s = 2.0 * self.jitter_ps;
        let erf = statrs::function::erf::erf;
        0.5 * (erf((half - r) / s) + erf((half + r) / s))
    }
}

/// Expected rates (per second) at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkRates {
    pub singles_a_hz: f64,
    pub singles_b_hz: f64,
    /// All-basis true coincidences in the central peak (no window cut).
    pub central_hz: f64,
    /// True coincidences in each side peak at ±τ.
    pub side_hz: f64,
    pub zz_true_hz: f64,
    pub zz_acc_hz: f64,
    pub zz_err_hz: f64,
    pub xx_true_hz: f64,
    pub xx_acc_hz: f64,
    pub xx_err_hz: f64,
    pub window_fraction: f64,
}

impl LinkRates {
    pub fn zz_hz(&self) -> f64 {
        self.zz_true_hz + self.zz_acc_hz
    }

    pub fn xx_hz(&self) -> f64 {
        self.xx_true_hz + self.xx_acc_hz
    }

    pub fn qber_z(&self) -> f64 {
        ratio(self.zz_err_hz, self.zz_hz())
    }

    pub fn qber_x(&self) -> f64 {
        ratio(self.xx_err_hz, self.xx_hz())
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.5
    }
}

/// Analytic detection model: four detectors per station (Z short/long, X ±),
/// non-paralyzable dead time, Gaussian jitter and uncorrelated accidentals.
pub fn link_rates(inp: &RateInputs) -> LinkRates {
    let r = inp.pair_rate_hz;
    let tau = inp.dead_time_ps * 1e-12;
    let det_in = |eta: f64| r * eta / 4.0 + inp.dark_rate_hz;
    let live = |rin: f64| 1.0 / (1.0 + rin * tau);
    let (in_a, in_b) = (det_in(inp.eta_a), det_in(inp.eta_b));
    let (k_a, k_b) = (live(in_a), live(in_b));
    let (s_a, s_b) = (in_a * k_a, in_b * k_b);
    let pairs = r * inp.eta_a * inp.eta_b * k_a * k_b;
    let pw = inp.window_fraction();
    let zz_true = pairs / 8.0 * pw;
    let xx_true = zz_true;
    // two detectors per basis on each side
    let zz_acc = accidental_rate(2.0 * s_a, 2.0 * s_b, inp.window_ps);
    let xx_acc = zz_acc;
    let e_x = (1.0 - inp.visibility * inp.phase_error_rad.cos()) / 2.0;
    LinkRates {
        singles_a_hz: 4.0 * s_a,
        singles_b_hz: 4.0 * s_b,
        central_hz: pairs / 2.0,
        side_hz: pairs / 4.0,
        zz_true_hz: zz_true,
        zz_acc_hz: zz_acc,
        zz_err_hz: 0.5 * zz_acc,
        xx_true_hz: xx_true,
        xx_acc_hz: xx_acc,
        xx_err_hz: e_x * xx_true + 0.5 * xx_acc,
        window_fraction: pw,
    }
}

/// Counts drawn for one tick of the rate-level model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickCounts {
    pub singles_a: u64,
    pub singles_b: u64,
    pub central: u64,
    pub zz: u64,
    pub zz_err: u64,
    pub xx: u64,
    pub xx_err: u64,
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("finite mean").sample(rng) as u64
    }
}

fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else {
        Binomial::new(n, p.min(1.0)).expect("valid p").sample(rng)
    }
}

/// Poisson/binomial counts for an interval of `dt_s` at fixed rates.
pub fn sample_tick<R: Rng>(rates: &LinkRates, dt_s: f64, rng: &mut R) -> TickCounts {
    let zz = poisson(rates.zz_hz() * dt_s, rng);
    let xx = poisson(rates.xx_hz() * dt_s, rng);
    TickCounts {
        singles_a: poisson(rates.singles_a_hz * dt_s, rng),
        singles_b: poisson(rates.singles_b_hz * dt_s, rng),
        central: poisson(rates.central_hz * dt_s, rng),
        zz,
        zz_err: binomial(zz, rates.qber_z(), rng),
        xx,
        xx_err: binomial(xx, rates.qber_x(), rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RateInputs {
        RateInputs {
            pair_rate_hz: 3.3e8,
            eta_a: 0.02,
            eta_b: 0.02,
            dark_rate_hz: 0.0,
            window_ps: 120.0,
            jitter_ps: 30.0,
            dead_time_ps: 0.0,
            visibility: 1.0,
            phase_error_rad: 0.0,
            timing_offset_ps: 0.0,
        }
    }

    #[test]
    fn timing_residual_costs_coincidences() {
        let r0 = base().window_fraction();
        assert!((r0 - statrs::function::erf::erf(120.0 / 120.0)).abs() < 1e-12);
        let shifted = RateInputs { timing_offset_ps: 30.0, ..base() };
        let neg = RateInputs { timing_offset_ps: -30.0, ..base() };
        assert!(shifted.window_fraction() < r0);
        assert!((shifted.window_fraction() - neg.window_fraction()).abs() < 1e-15);
    }

    #[test]
    fn accidental_product() {
        assert_eq!(accidental_rate(0.0, 5e6, 120.0), 0.0);
        assert!((accidental_rate(1e5, 1e5, 120.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn doubling_pair_rate_doubles_accidental_ratio() {
        let r1 = link_rates(&base());
        let r2 = link_rates(&RateInputs { pair_rate_hz: 6.6e8, ..base() });
        let q1 = r1.zz_acc_hz / r1.zz_true_hz;
        let q2 = r2.zz_acc_hz / r2.zz_true_hz;
        assert!((q2 / q1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn qber_z_tracks_double_pair_fraction() {
        let r = link_rates(&base());
        // acc/true = 2·R·w/p_w with no darks or dead time
        let x = 2.0 * 3.3e8 * 120e-12 / r.window_fraction;
        assert!((r.qber_z() - 0.5 * x / (1.0 + x)).abs() < 1e-12);
        assert!((r.qber_z() - 0.043).abs() < 0.002);
    }
}
