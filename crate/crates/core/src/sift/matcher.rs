use serde::{Deserialize, Serialize};

use crate::model::{AnalyzerTable, Basis, BasisOutcome, TimeTag};
use crate::sync::ClockDiscipline;
use crate::{Error, Result};

/// One accepted coincidence, timestamps already disciplined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub t_a: i64,
    pub t_b: i64,
    pub outcome_a: BasisOutcome,
    pub outcome_b: BasisOutcome,
    pub delta: i64,
    pub idx_a: u32,
    pub idx_b: u32,
}

impl CoincidenceRecord {
    pub fn same_basis(&self) -> bool {
        self.outcome_a.basis() == self.outcome_b.basis()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchStats {
    pub matched: usize,
    pub zz: usize,
    pub xx: usize,
    pub mixed_discarded: usize,
    /// Pairs seen at ±τ (delayed/undelayed cross terms), never accepted.
    pub side_peak: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Z–Z and X–X records in Alice's time order.
    pub records: Vec<CoincidenceRecord>,
    pub stats: MatchStats,
    /// Set when the discipline was unlocked and records were withheld.
    pub flagged: bool,
}

/// Index of the element of sorted `xs` nearest to `t`, ties to the earlier one.
fn nearest(xs: &[i64], t: i64, hint: &mut usize) -> Option<usize> {
    if xs.is_empty() {
        return None;
    }
    while *hint < xs.len() && xs[*hint] < t {
        *hint += 1;
    }
    let right = (*hint < xs.len()).then_some(*hint);
    let left = hint.checked_sub(1);
    match (left, right) {
        (Some(l), Some(r)) => Some(if t - xs[l] <= xs[r] - t { l } else { r }),
        (Some(l), None) => Some(l),
        (None, r) => r,
    }
}

/// Mutual-nearest-neighbour matching of two sorted timestamp streams within
/// `±window/2`. Each tag is used at most once and swapping the streams yields
/// the mirrored pairs.
pub fn match_indices(a: &[i64], b: &[i64], window_ps: u64) -> Result<Vec<(u32, u32)>> {
    if a.windows(2).any(|w| w[1] < w[0]) || b.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("timestamps are not sorted".into()));
    }
    let half = (window_ps / 2) as i64;
    let mut hint = 0;
    let nn_b: Vec<Option<usize>> = b.iter().map(|&t| nearest(a, t, &mut hint)).collect();
    let mut out = Vec::new();
    let mut hint = 0;
    for (i, &ta) in a.iter().enumerate() {
        if let Some(j) = nearest(b, ta, &mut hint) {
            if (b[j] - ta).abs() <= half && nn_b[j] == Some(i) {
                out.push((i as u32, j as u32));
            }
        }
    }
    Ok(out)
}

/// Matches Alice's tags with Bob's disciplined tags and sifts by basis.
/// Z–Z and X–X central-peak records are kept; mixed-basis records are dropped.
pub fn match_coincidences(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    discipline: Option<&ClockDiscipline>,
    window_ps: u64,
    side_offset_ps: i64,
    table: &AnalyzerTable,
) -> Result<MatchResult> {
    let Some(d) = discipline else {
        return Ok(MatchResult {
            flagged: true,
            ..Default::default()
        });
    };
    let a: Vec<i64> = tags_a.iter().map(|t| t.t as i64).collect();
    let b: Vec<i64> = tags_b.iter().map(|t| d.apply(t.t as i64)).collect();
    let pairs = match_indices(&a, &b, window_ps)?;
    let mut stats = MatchStats {
        matched: pairs.len(),
        ..Default::default()
    };
    let outcome = |t: &TimeTag| {
        table
            .outcome(t.channel)
            .ok_or_else(|| Error::Protocol(format!("channel {} not in analyzer table", t.channel)))
    };
    let mut records = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let (oa, ob) = (outcome(&tags_a[i as usize])?, outcome(&tags_b[j as usize])?);
        let rec = CoincidenceRecord {
            t_a: a[i as usize],
            t_b: b[j as usize],
            outcome_a: oa,
            outcome_b: ob,
            delta: b[j as usize] - a[i as usize],
            idx_a: i,
            idx_b: j,
        };
        if !rec.same_basis() {
            stats.mixed_discarded += 1;
            continue;
        }
        match oa.basis() {
            Basis::Z => stats.zz += 1,
            Basis::X => stats.xx += 1,
        }
        records.push(rec);
    }
    // side-peak census: shift Bob by ∓τ and count mutual matches
    let half = (window_ps / 2) as i64;
    if side_offset_ps > half {
        for s in [side_offset_ps, -side_offset_ps] {
            let shifted: Vec<i64> = b.iter().map(|t| t - s).collect();
            stats.side_peak += match_indices(&a, &shifted, window_ps)?.len();
        }
    }
    Ok(MatchResult {
        records,
        stats,
        flagged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_neighbour_is_mutual() {
        // a1 and a2 compete for b1; a2 is nearer
        let a = vec![100, 130];
        let b = vec![140];
        assert_eq!(match_indices(&a, &b, 120).unwrap(), vec![(1, 0)]);
        assert_eq!(match_indices(&b, &a, 120).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn window_edges_inclusive() {
        assert_eq!(match_indices(&[0], &[60], 120).unwrap().len(), 1);
        assert_eq!(match_indices(&[0], &[-60], 120).unwrap().len(), 1);
        assert!(match_indices(&[0], &[61], 120).unwrap().is_empty());
    }
}
