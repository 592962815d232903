use serde::{Deserialize, Serialize};

/// Signed picosecond arithmetic for deltas and offsets.
pub type Picos = i64;

pub const PS_PER_S: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Station {
    Alice,
    Bob,
}

impl Station {
    pub fn code(self) -> u8 {
        match self {
            Station::Alice => 0,
            Station::Bob => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Station::Alice),
            1 => Some(Station::Bob),
            _ => None,
        }
    }

    pub fn peer(self) -> Self {
        match self {
            Station::Alice => Station::Bob,
            Station::Bob => Station::Alice,
        }
    }
}

/// One detection: picosecond timestamp, detector channel and owning station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTag {
    pub t: u64,
    pub channel: u16,
    pub station: Station,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

/// Measurement result of one analyzer output port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisOutcome {
    ZShort,
    ZLong,
    XPlus,
    XMinus,
}

impl BasisOutcome {
    pub fn basis(self) -> Basis {
        match self {
            BasisOutcome::ZShort | BasisOutcome::ZLong => Basis::Z,
            BasisOutcome::XPlus | BasisOutcome::XMinus => Basis::X,
        }
    }

    /// Key bit for Z outcomes (short→0, long→1); X outcomes carry no key.
    pub fn key_bit(self) -> Option<bool> {
        match self {
            BasisOutcome::ZShort => Some(false),
            BasisOutcome::ZLong => Some(true),
            _ => None,
        }
    }

    /// Binary value within the basis, used for error counting in either basis.
    pub fn value(self) -> bool {
        matches!(self, BasisOutcome::ZLong | BasisOutcome::XMinus)
    }
}

/// Maps detector channel ids to analyzer outputs. Each channel id resolves to
/// exactly one (basis, outcome) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerTable {
    channels: Vec<BasisOutcome>,
}

impl Default for AnalyzerTable {
    fn default() -> Self {
        Self {
            channels: vec![
                BasisOutcome::ZShort,
                BasisOutcome::ZLong,
                BasisOutcome::XPlus,
                BasisOutcome::XMinus,
            ],
        }
    }
}

impl AnalyzerTable {
    pub fn new(channels: Vec<BasisOutcome>) -> crate::Result<Self> {
        for (i, a) in channels.iter().enumerate() {
            if channels[..i].contains(a) {
                return Err(crate::Error::Argument(format!("analyzer output {a:?} mapped twice")));
            }
        }
        Ok(Self { channels })
    }

    pub fn outcome(&self, channel: u16) -> Option<BasisOutcome> {
        self.channels.get(channel as usize).copied()
    }

    pub fn channel(&self, outcome: BasisOutcome) -> u16 {
        self.channels
            .iter()
            .position(|&o| o == outcome)
            .expect("analyzer table covers all outcomes") as u16
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}
