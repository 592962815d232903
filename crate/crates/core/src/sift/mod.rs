//! Coincidence matching, basis sifting and QBER statistics.

mod block;
mod matcher;
mod stats;

pub use block::{extract_sifted_block, select_sample, SiftConfig, SiftedBlock};
pub use matcher::{match_coincidences, match_indices, CoincidenceRecord, MatchResult, MatchStats};
pub use stats::{qber_confidence, QberEstimate};
