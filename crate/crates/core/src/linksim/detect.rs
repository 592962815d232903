use serde::{Deserialize, Serialize};

use super::simulator::LinkSimulator;
use crate::model::{LinkScenario, Station, TimeTag};
use crate::Result;

/// Ground truth attached to a generated tag; never exposed to the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagOrigin {
    /// Pair id, or `None` for a dark count.
    pub pair: Option<u64>,
    /// Photon took the delayed (long) path of its analyzer.
    pub delayed: bool,
}

/// Time-sorted tags of one station with their ground-truth labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationStream {
    pub tags: Vec<TimeTag>,
    pub origin: Vec<TagOrigin>,
}

impl StationStream {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn times(&self) -> Vec<i64> {
        self.tags.iter().map(|t| t.t as i64).collect()
    }

    pub fn station(&self) -> Option<Station> {
        self.tags.first().map(|t| t.station)
    }

    pub fn extend(&mut self, other: StationStream) {
        self.tags.extend(other.tags);
        self.origin.extend(other.origin);
    }
}

/// Detects each photon of `pairs` independently and returns both stations'
/// streams, with dark counts, dead time and clock offsets applied. Uses the
/// scenario's pump setting and zero actuator corrections.
pub fn propagate_and_detect(pairs: &[u64], scenario: &LinkScenario) -> Result<(StationStream, StationStream)> {
    let mut sim = LinkSimulator::new(scenario.clone())?;
    let end_ps = pairs.last().map_or(0, |&t| t + 1);
    Ok(sim.detect_pairs(pairs, end_ps))
}
