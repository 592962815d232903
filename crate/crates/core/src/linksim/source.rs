use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{rng_stream, streams};
use crate::model::LinkScenario;
use crate::{Error, Result};

/// Pair creation times (ps) of a homogeneous Poisson process over `[0, duration)`.
pub fn generate_pairs_at_rate<R: Rng>(rate_hz: f64, duration_s: f64, rng: &mut R) -> Result<Vec<u64>> {
    if !(rate_hz > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Argument("pair rate and duration must be positive".into()));
    }
    let gap = Exp::new(rate_hz * 1e-12).expect("positive rate");
    let end = duration_s * 1e12;
    let mut out = Vec::with_capacity((rate_hz * duration_s * 1.01) as usize + 16);
    let mut t = 0f64;
    loop {
        t += gap.sample(rng);
        if t >= end {
            break;
        }
        out.push(t as u64);
    }
    Ok(out)
}

/// Pair creation times for the scenario's selected slot and pump setting.
/// Each pair carries one short-wavelength photon (Bob) and one long-wavelength photon (Alice).
pub fn generate_pairs(scenario: &LinkScenario, duration_s: f64) -> Result<Vec<u64>> {
    scenario.validate()?;
    let mut rng = rng_stream(scenario.seed, streams::PAIRS);
    generate_pairs_at_rate(scenario.pair_rate_at(scenario.pump_attenuation_db), duration_s, &mut rng)
}
