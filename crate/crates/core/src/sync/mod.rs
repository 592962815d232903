//! Coincidence-histogram clock synchronisation. Only timestamps enter this
//! module: outcomes and bases are never visible here.

mod acquisition;
mod discipline;
mod engine;
mod histogram;
mod peak;

pub use acquisition::{acquisition_search, acquisition_with, Acquisition, AcquisitionConfig};
pub use discipline::{update_discipline, ClockDiscipline, DisciplineConfig};
pub use engine::{SyncConfig, SyncEngine, SyncEvent};
pub use histogram::{build_histogram, CoincidenceHistogram, HistogramParams};
pub use peak::{find_peak, PeakConfig, PeakEstimate};
