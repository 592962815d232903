//! Simulator and autonomous post-processing pipeline for an entanglement-based
//! (BBM92, time-energy) QKD link.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: time tags, channel plan, loss arithmetic, scenario configs, telemetry.
//! - [`linksim`]: seeded photon-pair generation, detection, Franson interference, drift.
//! - [`sync`]: coincidence-histogram clock synchronisation.
//! - [`sift`]: coincidence matching, basis sifting, QBER statistics.
//! - [`cascade`]: interactive Cascade reconciliation and its instance scheduler.
//! - [`pa`]: finite-key secret length, Toeplitz hashing, analytic SKR model, key store.
//! - [`control`]: pump, phase and polarization loops plus the watchdog.
//! - [`netlink`]: framed classical channel with loopback, socket and fault-injecting transports.
//! - [`pipeline`]: the two station engines wired over a channel, at tag level and at rate level.
//! - [`harness`]: named experiments, calibration and summary reports.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```text
//! cargo run --release --example channel_plan
//! cargo run --release --example link_simulation
//! cargo run --release --example clock_sync
//! cargo run --release --example sifting
//! cargo run --release --example cascade_reconcile
//! cargo run --release --example privacy_amplification
//! cargo run --release --example controllers
//! cargo run --release --example classical_channel
//! cargo run --release --example single_link
//! cargo run --release --example loss_sweep
//! cargo run --release --example endurance
//! ```

pub mod cascade;
pub mod control;
pub mod error;
pub mod harness;
pub mod linksim;
pub mod model;
pub mod netlink;
pub mod pa;
pub mod pipeline;
pub mod sift;
pub mod sync;

pub use error::{Error, Result};
