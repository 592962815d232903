use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cascade::InstanceTiming;
use crate::control::PumpConfig;
use crate::linksim::{link_rates, LinkRates, RateInputs};
use crate::model::LinkScenario;
use crate::pa::{skr_model, SkrModel, SkrPrediction};
use crate::pipeline::CascadeProfile;
use crate::{Error, Result};

/// Field measurement used to pin the free source parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub loss_db: f64,
    pub skr_bps: f64,
}

/// Steady-state key-rate model: the pump sits where the QBERz loop settles,
/// Cascade efficiency and throughput come from a measured profile.
#[derive(Debug, Clone)]
pub struct SteadyStateModel {
    pub skr: SkrModel,
    pub pump: PumpConfig,
    pub profile: Option<Arc<CascadeProfile>>,
    pub timing: InstanceTiming,
    /// Cascade instances; `None` removes the throughput cap.
    pub max_parallel: Option<usize>,
}

impl SteadyStateModel {
    pub fn new(skr: SkrModel, pump: PumpConfig) -> Self {
        Self { skr, pump, profile: None, timing: InstanceTiming::default(), max_parallel: None }
    }
}

/// Predicted steady state at one loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub loss_db: f64,
    pub pump_attenuation_db: f64,
    pub rates: LinkRates,
    pub f_ec: f64,
    pub cascade_capacity_bps: Option<f64>,
    pub prediction: SkrPrediction,
}

fn rates_at(sc: &LinkScenario, att: f64) -> LinkRates {
    link_rates(&RateInputs::from_scenario(sc, att, 1.0, 1.0, 0.0))
}

/// Attenuation where the QBERz loop settles. When the set-point is out of
/// reach the pump ends at the bound that minimises QBERz.
pub fn settled_attenuation(sc: &LinkScenario, pump: &PumpConfig) -> f64 {
    let (lo, hi) = (pump.min_attenuation_db, pump.max_attenuation_db);
    let q = |att: f64| rates_at(sc, att).qber_z() - pump.set_point;
    if q(lo) <= 0.0 {
        return lo;
    }
    // first crossing on a 0.25 dB grid, then bisection
    let steps = ((hi - lo) / 0.25).ceil().max(1.0) as usize;
    let mut prev = lo;
    for i in 1..=steps {
        let x = (lo + (hi - lo) * i as f64 / steps as f64).min(hi);
        if q(x) <= 0.0 {
            let (mut a, mut b) = (prev, x);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if q(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return b;
        }
        prev = x;
    }
    (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .min_by(|&a, &b| q(a).total_cmp(&q(b)))
        .unwrap_or(lo)
}

/// Steady-state prediction for `sc` with its channel loss set to `loss_db`.
pub fn operating_point(sc: &LinkScenario, loss_db: f64, m: &SteadyStateModel) -> OperatingPoint {
    let sc = sc.clone().with_channel_loss(loss_db);
    let att = settled_attenuation(&sc, &m.pump);
    let rates = rates_at(&sc, att);
    let q = rates.qber_z();
    let f_ec = m.profile.as_ref().map_or(m.skr.f_ec, |p| p.f_ec(q));
    let cap = match (&m.profile, m.max_parallel) {
        (Some(p), Some(k)) => Some(p.capacity_bps(q, &m.timing, k)),
        _ => None,
    };
    let skr = SkrModel { f_ec, cascade_capacity_bps: cap, ..m.skr };
    OperatingPoint {
        loss_db,
        pump_attenuation_db: att,
        rates,
        f_ec,
        cascade_capacity_bps: cap,
        prediction: skr_model(&rates, &skr),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorResidual {
    pub loss_db: f64,
    pub target_bps: f64,
    pub model_bps: f64,
    /// `model / target − 1`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub pair_rate_hz: f64,
    pub collection_efficiency: f64,
    pub residuals: Vec<AnchorResidual>,
    /// Root-mean-square of `ln(model / target)` over the anchors.
    pub rms_log_residual: f64,
}

/// Fitted scenario and its report.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub scenario: LinkScenario,
    pub report: CalibrationReport,
}

const MIN_EFFICIENCY: f64 = 1e-6;

fn with_efficiency(sc: &LinkScenario, eta: f64) -> LinkScenario {
    LinkScenario { collection_efficiency: eta, ..sc.clone() }
}

/// Brightness for which QBERz at the scenario's pump setting equals the set-point at `loss_db`.
fn fit_pair_rate(sc: &LinkScenario, loss_db: f64, set_point: f64) -> Result<f64> {
    let at = sc.clone().with_channel_loss(loss_db);
    let q = |log_r: f64| {
        let s = LinkScenario { pair_rate_hz: 10f64.powf(log_r), ..at.clone() };
        rates_at(&s, s.pump_attenuation_db).qber_z() - set_point
    };
    let (mut a, mut b) = (2.0, 14.0);
    if q(b) < 0.0 {
        return Err(Error::Fit(format!("QBERz set-point {set_point} unreachable at {loss_db} dB")));
    }
    if q(a) > 0.0 {
        return Err(Error::Fit(format!("QBERz exceeds {set_point} at any brightness at {loss_db} dB")));
    }
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if q(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(10f64.powf(0.5 * (a + b)))
}

fn skr_at(sc: &LinkScenario, a: &Anchor, m: &SteadyStateModel) -> f64 {
    operating_point(sc, a.loss_db, m).prediction.skr_bps
}

/// Smallest collection efficiency reaching the anchor rate.
fn fit_single(sc: &LinkScenario, a: &Anchor, m: &SteadyStateModel) -> Result<f64> {
    let top = skr_at(&with_efficiency(sc, 1.0), a, m);
    if top < a.skr_bps {
        return Err(Error::Fit(format!(
            "anchor ({} dB, {} bps) exceeds the lossless-collection bound {top:.3} bps",
            a.loss_db, a.skr_bps
        )));
    }
    let (mut lo, mut hi) = (MIN_EFFICIENCY.ln(), 0.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if skr_at(&with_efficiency(sc, mid.exp()), a, m) >= a.skr_bps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

fn log_cost(sc: &LinkScenario, anchors: &[Anchor], m: &SteadyStateModel) -> f64 {
    anchors
        .iter()
        .map(|a| {
            let v = skr_at(sc, a, m).max(1e-30);
            (v / a.skr_bps).ln().powi(2)
        })
        .sum()
}

/// Least-squares collection efficiency in log space (golden section).
fn fit_many(sc: &LinkScenario, anchors: &[Anchor], m: &SteadyStateModel) -> f64 {
    let cost = |x: f64| log_cost(&with_efficiency(sc, x.exp()), anchors, m);
    let steps = 60;
    let lo = MIN_EFFICIENCY.ln();
    let grid: Vec<f64> = (0..=steps).map(|i| lo * (1.0 - i as f64 / steps as f64)).collect();
    let best = grid.iter().copied().min_by(|&a, &b| cost(a).total_cmp(&cost(b))).unwrap_or(0.0);
    let h = -lo / steps as f64;
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(0.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if cost(c) <= cost(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (0.5 * (a + b)).exp()
}

/// Fits the source brightness from the QBERz set-point at the first anchor
/// and the collection efficiency from the anchor key rates. One anchor is
/// matched exactly; several are fitted by least squares in log rate.
pub fn fit_calibration(base: &LinkScenario, anchors: &[Anchor], m: &SteadyStateModel) -> Result<Calibration> {
    let first = anchors.first().ok_or_else(|| Error::Fit("no calibration anchor".into()))?;
    if let Some(a) = anchors.iter().find(|a| !(a.skr_bps > 0.0) || !(a.loss_db >= 0.0)) {
        return Err(Error::Fit(format!("anchor ({}, {}) must have positive rate and loss", a.loss_db, a.skr_bps)));
    }
    let mut sc = base.clone();
    // brightness and efficiency interact only weakly through dark counts
    for _ in 0..4 {
        sc.pair_rate_hz = fit_pair_rate(&sc, first.loss_db, m.pump.set_point)?;
        sc.collection_efficiency = if anchors.len() == 1 {
            fit_single(&sc, first, m)?
        } else {
            fit_many(&sc, anchors, m)
        };
    }
    sc.validate()?;
    let residuals: Vec<AnchorResidual> = anchors
        .iter()
        .map(|a| {
            let v = skr_at(&sc, a, m);
            AnchorResidual { loss_db: a.loss_db, target_bps: a.skr_bps, model_bps: v, relative_error: v / a.skr_bps - 1.0 }
        })
        .collect();
    let rms = (log_cost(&sc, anchors, m) / anchors.len() as f64).sqrt();
    Ok(Calibration {
        report: CalibrationReport {
            pair_rate_hz: sc.pair_rate_hz,
            collection_efficiency: sc.collection_efficiency,
            residuals,
            rms_log_residual: rms,
        },
        scenario: sc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SteadyStateModel {
        SteadyStateModel::new(SkrModel::default(), PumpConfig::default())
    }

    #[test]
    fn single_anchor_is_matched() {
        let a = Anchor { loss_db: 20.0, skr_bps: 7069.0 };
        let c = fit_calibration(&LinkScenario::default(), &[a], &model()).unwrap();
        let r = c.report.residuals[0];
        assert!(r.relative_error.abs() < 1e-3, "{r:?}");
        let op = operating_point(&c.scenario, 20.0, &model());
        assert!((op.pump_attenuation_db - c.scenario.pump_attenuation_db).abs() < 1e-3);
        assert!((op.prediction.qber_z - 0.043).abs() < 1e-6);
    }

    #[test]
    fn settled_pump_hits_the_set_point() {
        let sc = LinkScenario::default().with_channel_loss(30.0);
        let att = settled_attenuation(&sc, &PumpConfig::default());
        assert!((rates_at(&sc, att).qber_z() - 0.043).abs() < 1e-9);
    }

    #[test]
    fn infeasible_anchor_is_rejected() {
        let a = Anchor { loss_db: 20.0, skr_bps: 1e9 };
        assert!(matches!(fit_calibration(&LinkScenario::default(), &[a], &model()), Err(Error::Fit(_))));
        assert!(fit_calibration(&LinkScenario::default(), &[], &model()).is_err());
    }
}
