use rand::seq::SliceRandom;

use crate::linksim::rng_stream;

/// Position-to-index map for one iteration; iteration 0 is the identity.
pub fn iteration_permutation(n: usize, seed: u64, iteration: u32) -> Vec<u32> {
    let mut p: Vec<u32> = (0..n as u32).collect();
    if iteration > 0 {
        p.shuffle(&mut rng_stream(seed, 0x5348_0000 + iteration as u64));
    }
    p
}

/// Forward and inverse permutations for every iteration of a run.
#[derive(Debug, Clone)]
pub struct Permutations {
    /// `fwd[i][pos]` is the key index at permuted position `pos`.
    pub fwd: Vec<Vec<u32>>,
    /// `inv[i][idx]` is the permuted position of key index `idx`.
    pub inv: Vec<Vec<u32>>,
}

impl Permutations {
    pub fn new(n: usize, seed: u64, iterations: u32) -> Self {
        let fwd: Vec<Vec<u32>> = (0..iterations).map(|i| iteration_permutation(n, seed, i)).collect();
        let inv = fwd
            .iter()
            .map(|p| {
                let mut q = vec![0u32; n];
                for (pos, &idx) in p.iter().enumerate() {
                    q[idx as usize] = pos as u32;
                }
                q
            })
            .collect();
        Self { fwd, inv }
    }

    /// Parity of `bits` over permuted positions `start..end` of iteration `it`.
    pub fn parity(&self, bits: &[bool], it: usize, start: u32, end: u32) -> bool {
        self.fwd[it][start as usize..end as usize]
            .iter()
            .fold(false, |acc, &i| acc ^ bits[i as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_bijective_and_seeded() {
        let p = Permutations::new(1000, 9, 4);
        assert_eq!(p.fwd[0], (0..1000).collect::<Vec<u32>>());
        for i in 0..4 {
            for idx in 0..1000u32 {
                assert_eq!(p.fwd[i][p.inv[i][idx as usize] as usize], idx);
            }
        }
        assert_ne!(p.fwd[1], p.fwd[2]);
        assert_eq!(iteration_permutation(1000, 9, 3), p.fwd[3]);
        assert_ne!(iteration_permutation(1000, 10, 3), p.fwd[3]);
    }
}
