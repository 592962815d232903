//! Domain types shared by every stage: time tags, channel plan, loss
//! arithmetic, scenario configuration and telemetry records.

mod loss;
mod plan;
mod scenario;
mod tag;
pub mod tagfile;
mod telemetry;

pub use loss::{loss_to_transmission, transmission_to_loss};
pub use plan::{channel_pair_transmission, freq_thz_to_nm, nm_to_freq_thz, ChannelPlan, CwdmBand, PairSlot};
pub use scenario::{
    ClockModel, DetectorModel, DriftStep, LinkScenario, PhaseJump, PhaseModel, PolarizationModel,
};
pub use tag::{AnalyzerTable, Basis, BasisOutcome, Picos, Station, TimeTag, PS_PER_S};
pub use telemetry::{TelemetryRecord, TelemetryWriter, TELEMETRY_SCHEMA};
