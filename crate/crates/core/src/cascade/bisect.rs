use crate::{Error, Result};

/// Result of a standalone BINARY search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BisectOutcome {
    /// Index of the corrected bit within the segment.
    pub position: usize,
    /// Parities Alice disclosed.
    pub exchanges: u32,
}

/// Midpoint rule shared with the batched session.
pub(crate) fn split(lo: u32, hi: u32) -> u32 {
    lo + (hi - lo) / 2
}

/// Locates and flips one erroneous bit of a segment with odd relative parity.
///
/// Each exchange discloses Alice's parity of the lower half of the current range.
pub fn binary_bisect(alice: &[bool], bob: &mut [bool]) -> Result<BisectOutcome> {
    if alice.len() != bob.len() {
        return Err(Error::Argument("segments differ in length".into()));
    }
    let parity = |s: &[bool]| s.iter().fold(false, |a, &b| a ^ b);
    if parity(alice) == parity(bob) {
        return Err(Error::Precondition("segment parities are equal".into()));
    }
    let (mut lo, mut hi) = (0u32, alice.len() as u32);
    let mut exchanges = 0;
    while hi - lo > 1 {
        let mid = split(lo, hi);
        exchanges += 1;
        let (l, m) = (lo as usize, mid as usize);
        if parity(&alice[l..m]) != parity(&bob[l..m]) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    bob[lo as usize] ^= true;
    Ok(BisectOutcome { position: lo as usize, exchanges })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_error_in_16_bits_takes_4_exchanges() {
        for pos in 0..16 {
            let a = vec![false; 16];
            let mut b = a.clone();
            b[pos] = true;
            let out = binary_bisect(&a, &mut b).unwrap();
            assert_eq!(out, BisectOutcome { position: pos, exchanges: 4 });
            assert_eq!(a, b);
        }
    }

    #[test]
    fn boundary_positions_of_odd_lengths() {
        for len in 1..40usize {
            for pos in [0, len - 1] {
                let a: Vec<bool> = (0..len).map(|i| i % 3 == 0).collect();
                let mut b = a.clone();
                b[pos] ^= true;
                let out = binary_bisect(&a, &mut b).unwrap();
                assert_eq!(out.position, pos);
                assert!(out.exchanges <= (len as f64).log2().ceil() as u32);
            }
        }
    }

    #[test]
    fn three_errors_yield_exactly_one_fix() {
        let n = 12;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let a = vec![false; n];
                    let mut b = a.clone();
                    for p in [i, j, k] {
                        b[p] = true;
                    }
                    let out = binary_bisect(&a, &mut b).unwrap();
                    assert!([i, j, k].contains(&out.position));
                    assert_eq!(b.iter().filter(|&&x| x).count(), 2);
                }
            }
        }
    }

    #[test]
    fn equal_parities_are_a_precondition_error() {
        let a = vec![true, false];
        let mut b = vec![false, true];
        assert!(matches!(binary_bisect(&a, &mut b), Err(Error::Precondition(_))));
    }
}
