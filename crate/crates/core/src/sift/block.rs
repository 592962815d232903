use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matcher::CoincidenceRecord;
use crate::model::Basis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftConfig {
    pub sample_fraction: f64,
    pub min_block: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            sample_fraction: 0.05,
            min_block: 4096,
        }
    }
}

/// Raw key of one block plus its error statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftedBlock {
    pub id: u64,
    pub bits_a: Vec<bool>,
    pub bits_b: Vec<bool>,
    pub x_agree: u64,
    pub x_disagree: u64,
    pub sample_size: u64,
    pub sample_errors: u64,
    pub z_error_estimate: f64,
    /// Positions (in Z–Z record order) disclosed for error estimation.
    pub disclosed: Vec<u32>,
    pub epoch_start_ps: i64,
    pub epoch_end_ps: i64,
}

impl SiftedBlock {
    pub fn len(&self) -> usize {
        self.bits_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits_a.is_empty()
    }

    /// X-basis error fraction relabeled into [0, 0.5].
    pub fn qber_x(&self) -> f64 {
        let n = self.x_agree + self.x_disagree;
        if n == 0 {
            return 0.0;
        }
        let q = self.x_disagree as f64 / n as f64;
        q.min(1.0 - q)
    }

    /// True error count of the retained key (simulation diagnostics).
    pub fn actual_errors(&self) -> usize {
        self.bits_a.iter().zip(&self.bits_b).filter(|(a, b)| a != b).count()
    }
}

/// Chooses `round(fraction·n)` distinct positions, sorted.
pub fn select_sample<R: Rng>(n: usize, fraction: f64, rng: &mut R) -> Vec<u32> {
    let m = ((n as f64) * fraction).round() as usize;
    let mut idx: Vec<u32> = rand::seq::index::sample(rng, n, m.min(n)).into_iter().map(|i| i as u32).collect();
    idx.sort_unstable();
    idx
}

/// Builds a sifted block from matched records. Returns `None` (block deferred)
/// when fewer than `min_block` Z–Z records are available.
pub fn extract_sifted_block<R: Rng>(id: u64, records: &[CoincidenceRecord], cfg: &SiftConfig, rng: &mut R) -> Option<SiftedBlock> {
    let zz: Vec<&CoincidenceRecord> = records.iter().filter(|r| r.outcome_a.basis() == Basis::Z).collect();
    if zz.len() < cfg.min_block.max(1) {
        return None;
    }
    let (mut x_agree, mut x_disagree) = (0, 0);
    for r in records.iter().filter(|r| r.outcome_a.basis() == Basis::X) {
        if r.outcome_a.value() == r.outcome_b.value() {
            x_agree += 1;
        } else {
            x_disagree += 1;
        }
    }
    let disclosed = select_sample(zz.len(), cfg.sample_fraction, rng);
    let mut in_sample = vec![false; zz.len()];
    for &i in &disclosed {
        in_sample[i as usize] = true;
    }
    let mut sample_errors = 0u64;
    let (mut bits_a, mut bits_b) = (Vec::with_capacity(zz.len()), Vec::with_capacity(zz.len()));
    for (i, r) in zz.iter().enumerate() {
        let (a, b) = (r.outcome_a.value(), r.outcome_b.value());
        if in_sample[i] {
            sample_errors += (a != b) as u64;
        } else {
            bits_a.push(a);
            bits_b.push(b);
        }
    }
    let sample_size = disclosed.len() as u64;
    Some(SiftedBlock {
        id,
        bits_a,
        bits_b,
        x_agree,
        x_disagree,
        sample_size,
        sample_errors,
        z_error_estimate: if sample_size > 0 { sample_errors as f64 / sample_size as f64 } else { 0.0 },
        disclosed,
        epoch_start_ps: records.first().map_or(0, |r| r.t_a),
        epoch_end_ps: records.last().map_or(0, |r| r.t_a),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linksim::rng_stream;
    use crate::model::BasisOutcome;

    fn rec(a: BasisOutcome, b: BasisOutcome, t: i64) -> CoincidenceRecord {
        CoincidenceRecord { t_a: t, t_b: t, outcome_a: a, outcome_b: b, delta: 0, idx_a: 0, idx_b: 0 }
    }

    #[test]
    fn full_sample_measures_error_fraction() {
        let mut recs: Vec<_> = (0..100).map(|i| rec(BasisOutcome::ZShort, BasisOutcome::ZShort, i)).collect();
        recs[10].outcome_b = BasisOutcome::ZLong;
        recs[20].outcome_b = BasisOutcome::ZLong;
        let cfg = SiftConfig { sample_fraction: 1.0, min_block: 100 };
        let b = extract_sifted_block(0, &recs, &cfg, &mut rng_stream(1, 0)).unwrap();
        assert!((b.z_error_estimate - 0.02).abs() < 1e-12);
        assert!(b.is_empty());
    }

    #[test]
    fn small_batches_are_deferred() {
        let recs: Vec<_> = (0..10).map(|i| rec(BasisOutcome::ZShort, BasisOutcome::ZShort, i)).collect();
        assert!(extract_sifted_block(0, &recs, &SiftConfig::default(), &mut rng_stream(1, 0)).is_none());
    }

    #[test]
    fn key_bits_follow_short_long_mapping() {
        let recs = vec![
            rec(BasisOutcome::ZShort, BasisOutcome::ZShort, 0),
            rec(BasisOutcome::ZLong, BasisOutcome::ZLong, 1),
            rec(BasisOutcome::XPlus, BasisOutcome::XMinus, 2),
        ];
        let cfg = SiftConfig { sample_fraction: 0.0, min_block: 2 };
        let b = extract_sifted_block(0, &recs, &cfg, &mut rng_stream(1, 0)).unwrap();
        assert_eq!(b.bits_a, vec![false, true]);
        assert_eq!((b.x_agree, b.x_disagree), (0, 1));
    }
}
