//! Seeded generation of Alice's and Bob's time-tag streams from a
//! [`LinkScenario`](crate::model::LinkScenario).
//!
//! Three levels of detail share one physical model:
//!
//! - tag level: [`generate_pairs`] + [`propagate_and_detect`], or the batched
//!   [`LinkSimulator`] which samples only pairs with at least one detection;
//! - histogram level: [`sample_histogram`] draws coincidence histograms directly;
//! - rate level: [`link_rates`] gives expected rates and [`sample_tick`] draws
//!   per-tick counts for long runs.

mod detect;
mod drift;
mod franson;
mod histsim;
mod rates;
mod simulator;
mod source;

pub use detect::{propagate_and_detect, StationStream, TagOrigin};
pub use drift::{ClockTrajectory, PolarizationTrajectory};
pub use franson::franson_outcome;
pub use histsim::{sample_histogram, PeakShape};
pub use rates::{accidental_rate, link_rates, sample_tick, LinkRates, RateInputs, TickCounts};
pub use simulator::{Actuators, Batch, LinkSimulator};
pub use source::{generate_pairs, generate_pairs_at_rate};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream `stream` derived from a scenario seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const PAIRS: u64 = 1;
    pub const DETECT: u64 = 2;
    pub const CLOCK_A: u64 = 3;
    pub const CLOCK_B: u64 = 4;
    pub const POL_A: u64 = 5;
    pub const POL_B: u64 = 6;
}
