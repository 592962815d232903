use serde::{Deserialize, Serialize};

use super::entropy::h2;
use super::finite::{secrecy_budget, FiniteKeyParams};
use crate::linksim::{link_rates, LinkRates, RateInputs};

/// Parameters of the analytic key-rate prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkrModel {
    pub f_ec: f64,
    /// Fraction of wall time producing key.
    pub duty_cycle: f64,
    /// Fraction of Z-basis bits disclosed for error estimation.
    pub sample_fraction: f64,
    /// Key bits per privacy-amplification block, which sets the finite-size term.
    pub pa_block_bits: f64,
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Reconciled bits/s the Cascade workers can sustain; key bits beyond it are lost.
    pub cascade_capacity_bps: Option<f64>,
}

impl Default for SkrModel {
    fn default() -> Self {
        Self {
            f_ec: 1.2,
            duty_cycle: 1.0,
            sample_fraction: 0.05,
            pa_block_bits: 1e6,
            eps_sec: 1e-9,
            eps_cor: 1e-15,
            cascade_capacity_bps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkrPrediction {
    pub sifted_z_hz: f64,
    /// Z bits left after the disclosed sample.
    pub key_z_hz: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    /// Secret bits per key bit after finite-size corrections.
    pub secret_fraction: f64,
    pub skr_bps: f64,
}

/// Predicted secret key rate for given link rates.
pub fn skr_model(rates: &LinkRates, m: &SkrModel) -> SkrPrediction {
    let sifted = rates.zz_hz();
    let key_z = sifted * (1.0 - m.sample_fraction);
    let (qz, qx) = (rates.qber_z(), rates.qber_x());
    let mut pred = SkrPrediction {
        sifted_z_hz: sifted,
        key_z_hz: key_z,
        qber_z: qz,
        qber_x: qx,
        secret_fraction: 0.0,
        skr_bps: 0.0,
    };
    if !(key_z > 0.0) || !(rates.xx_hz() > 0.0) || m.pa_block_bits < 1.0 {
        return pred;
    }
    let n_z = m.pa_block_bits.round().max(1.0);
    let n_x = (n_z * rates.xx_hz() / key_z).round().max(1.0);
    let p = FiniteKeyParams {
        eps_sec: m.eps_sec,
        eps_cor: m.eps_cor,
        n_z: n_z as u64,
        n_x: n_x as u64,
        e_x: qx.min(0.5),
        leak_ec: m.f_ec * h2(qz) * n_z,
        f_ec: m.f_ec,
    };
    if let Ok(Some(budget)) = secrecy_budget(&p) {
        pred.secret_fraction = (budget / n_z).max(0.0);
    }
    let reconciled = m.cascade_capacity_bps.map_or(key_z, |c| key_z.min(c.max(0.0)));
    pred.skr_bps = reconciled * pred.secret_fraction * m.duty_cycle;
    pred
}

/// Pair rate maximizing the predicted key rate, searched on a log grid and
/// refined by golden section. `inputs` supplies everything but the rate.
pub fn optimal_pair_rate(inputs: &RateInputs, m: &SkrModel, min_hz: f64, max_hz: f64) -> (f64, SkrPrediction) {
    let eval = |log_r: f64| {
        let inp = RateInputs { pair_rate_hz: 10f64.powf(log_r), ..*inputs };
        skr_model(&link_rates(&inp), m)
    };
    let (lo, hi) = (min_hz.max(1.0).log10(), max_hz.max(min_hz.max(1.0)).log10());
    let steps = 60;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|&a, &b| eval(a).skr_bps.total_cmp(&eval(b).skr_bps))
        .unwrap_or(lo);
    let h = (hi - lo) / steps as f64;
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if eval(c).skr_bps >= eval(d).skr_bps {
            b = d;
        } else {
            a = c;
        }
    }
    let x = (a + b) / 2.0;
    let p = eval(x);
    if p.skr_bps >= eval(best).skr_bps {
        (10f64.powf(x), p)
    } else {
        (10f64.powf(best), eval(best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinkScenario;

    #[test]
    fn skr_vanishes_with_loss() {
        let m = SkrModel::default();
        let mut prev = f64::INFINITY;
        for loss in [20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 120.0] {
            let sc = LinkScenario::default().with_channel_loss(loss);
            let inp = RateInputs::from_scenario(&sc, sc.pump_attenuation_db, 1.0, 1.0, 0.0);
            let (_, p) = optimal_pair_rate(&inp, &m, 1e3, 1e9);
            assert!(p.skr_bps < prev, "loss {loss}");
            prev = p.skr_bps;
        }
        assert!(prev < 1e-6);
    }
}
