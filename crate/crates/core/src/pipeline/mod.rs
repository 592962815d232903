//! End-to-end link pipelines.
//!
//! [`RateEngine`] advances both stations in ticks using expected rates and
//! Poisson counts, with the real controllers, watchdog and a Cascade cost
//! profile measured from the protocol implementation. The tag-level station
//! engines run the full protocol over a [`crate::netlink`] transport.

mod faults;
mod profile;
mod rate;
mod station;

pub use faults::{blackout_at, blackout_schedule, Blackout, FaultSchedule, LossStep};
pub use profile::{CascadeProfile, ProfilePoint};
pub use rate::{ControlSwitches, EngineConfig, PaRecord, PumpUpdate, RateEngine, RunReport, SyncModel, SyncUpdate};
pub use station::{
    run_alice, run_bob, run_link, run_link_loopback, EmittedKey, LinkReport, StationConfig, StationReport,
};
