use serde::{Deserialize, Serialize};

use super::tag::Station;
use crate::{Error, Result};

const C_NM_THZ: f64 = 299_792.458;

pub fn nm_to_freq_thz(nm: f64) -> f64 {
    C_NM_THZ / nm
}

pub fn freq_thz_to_nm(f_thz: f64) -> f64 {
    C_NM_THZ / f_thz
}

/// One coarse demultiplexer band routed to a station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwdmBand {
    pub center_nm: f64,
    /// Distance between the two half-transmission points. `inf` models an ideal band.
    pub width_nm: f64,
    pub station: Station,
}

impl CwdmBand {
    pub fn edges(&self) -> (f64, f64) {
        (self.center_nm - self.width_nm / 2.0, self.center_nm + self.width_nm / 2.0)
    }
}

/// A correlated DWDM channel pair, symmetric in frequency about the emission center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSlot {
    pub slot: u8,
    pub alice_freq_thz: f64,
    pub bob_freq_thz: f64,
}

impl PairSlot {
    pub fn alice_nm(&self) -> f64 {
        freq_thz_to_nm(self.alice_freq_thz)
    }

    pub fn bob_nm(&self) -> f64 {
        freq_thz_to_nm(self.bob_freq_thz)
    }
}

/// CWDM band split plus a 100 GHz DWDM grid of 40 symmetric channel pairs.
///
/// Bob receives the short-wavelength half of the spectrum, Alice the long one.
/// Slot `k` pairs the grid channels at `f_c ± (k - 1/2)·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub center_freq_thz: f64,
    pub spacing_ghz: f64,
    pub slots: u8,
    pub cwdm_bands: Vec<CwdmBand>,
    /// 10 %–90 % width of each logistic band edge.
    pub edge_width_nm: f64,
    pub dwdm_insertion_loss_db: f64,
}

impl Default for ChannelPlan {
    /// Plan with band edges calibrated against the field spectrum sweep.
    fn default() -> Self {
        let band = |lo: f64, hi: f64, station| CwdmBand {
            center_nm: (lo + hi) / 2.0,
            width_nm: hi - lo,
            station,
        };
        Self {
            center_freq_thz: 192.15,
            spacing_ghz: 100.0,
            slots: 40,
            cwdm_bands: vec![
                band(1522.0, 1540.3, Station::Bob),
                band(1541.1, 1560.0, Station::Bob),
                band(1562.0, 1579.9, Station::Alice),
                band(1581.8, 1600.0, Station::Alice),
            ],
            edge_width_nm: 0.25,
            dwdm_insertion_loss_db: 2.0,
        }
    }
}

impl ChannelPlan {
    /// Nominal 18 nm bands centred on the 1531/1551/1571/1591 nm CWDM grid.
    pub fn nominal() -> Self {
        let band = |center_nm, station| CwdmBand {
            center_nm,
            width_nm: 18.0,
            station,
        };
        Self {
            cwdm_bands: vec![
                band(1531.0, Station::Bob),
                band(1551.0, Station::Bob),
                band(1571.0, Station::Alice),
                band(1591.0, Station::Alice),
            ],
            ..Self::default()
        }
    }

    /// One unbounded band per station: the no-edge limit.
    pub fn ideal() -> Self {
        let band = |station| CwdmBand {
            center_nm: 1560.0,
            width_nm: f64::INFINITY,
            station,
        };
        Self {
            cwdm_bands: vec![band(Station::Bob), band(Station::Alice)],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots != 40 {
            return Err(Error::config("plan.slots", "the grid has exactly 40 pair slots"));
        }
        if !(self.spacing_ghz > 0.0) || !(self.center_freq_thz > 0.0) {
            return Err(Error::config("plan.spacing_ghz", "grid spacing and center must be positive"));
        }
        if !(self.edge_width_nm >= 0.0) {
            return Err(Error::config("plan.edge_width_nm", "must be non-negative"));
        }
        if !(self.dwdm_insertion_loss_db >= 0.0) {
            return Err(Error::config("plan.dwdm_insertion_loss_db", "must be non-negative"));
        }
        for (i, b) in self.cwdm_bands.iter().enumerate() {
            if !(b.width_nm > 0.0) {
                return Err(Error::config(format!("plan.cwdm_bands[{i}].width_nm"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn center_wavelength_nm(&self) -> f64 {
        freq_thz_to_nm(self.center_freq_thz)
    }

    pub fn slot(&self, slot: u8) -> Result<PairSlot> {
        if slot == 0 || slot > self.slots {
            return Err(Error::Range(format!("slot {slot} outside 1..={}", self.slots)));
        }
        let df = (slot as f64 - 0.5) * self.spacing_ghz * 1e-3;
        Ok(PairSlot {
            slot,
            alice_freq_thz: self.center_freq_thz - df,
            bob_freq_thz: self.center_freq_thz + df,
        })
    }

    /// Grid frequency of the energy-conserving partner channel.
    pub fn partner_freq_thz(&self, f_thz: f64) -> f64 {
        2.0 * self.center_freq_thz - f_thz
    }

    /// All 80 grid channel frequencies used by the 40 slots.
    pub fn grid_freqs_thz(&self) -> Vec<f64> {
        (1..=self.slots)
            .flat_map(|k| {
                let s = self.slot(k).expect("slot in range");
                [s.alice_freq_thz, s.bob_freq_thz]
            })
            .collect()
    }

    /// Combined CWDM transmission towards `station` at wavelength `nm`.
    pub fn cwdm_transmission(&self, station: Station, nm: f64) -> f64 {
        let s = self.edge_width_nm / (2.0 * 9f64.ln());
        let edge = |d: f64| {
            if s == 0.0 {
                if d >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 / (1.0 + (-d / s).exp())
            }
        };
        let t: f64 = self
            .cwdm_bands
            .iter()
            .filter(|b| b.station == station)
            .map(|b| {
                let (lo, hi) = b.edges();
                edge(nm - lo) * edge(hi - nm)
            })
            .sum();
        t.min(1.0)
    }

    pub fn dwdm_passband(&self) -> f64 {
        10f64.powf(-self.dwdm_insertion_loss_db / 10.0)
    }
}

/// Per-arm spectral transmission `(t_A, t_B)` of a pair slot: CWDM edge
/// transmission times the DWDM passband.
pub fn channel_pair_transmission(plan: &ChannelPlan, slot: u8) -> Result<(f64, f64)> {
    plan.validate()?;
    let s = plan.slot(slot)?;
    let pb = plan.dwdm_passband();
    Ok((
        pb * plan.cwdm_transmission(Station::Alice, s.alice_nm()),
        pb * plan.cwdm_transmission(Station::Bob, s.bob_nm()),
    ))
}
