use rand::Rng;

use crate::linksim::rng_stream;
use crate::{Error, Result};

fn pack(bits: impl ExactSizeIterator<Item = bool>) -> Vec<u64> {
    let mut w = vec![0u64; bits.len().div_ceil(64) + 1];
    for (i, b) in bits.enumerate() {
        w[i / 64] |= (b as u64) << (i % 64);
    }
    w
}

/// 64 bits of `words` starting at bit `pos`; `words` carries a zero guard word.
fn window(words: &[u64], pos: usize) -> u64 {
    let (q, r) = (pos / 64, pos % 64);
    if r == 0 {
        words[q]
    } else {
        (words[q] >> r) | (words[q + 1] << (64 - r))
    }
}

/// Multiplies `key` by the `out_len × n` Toeplitz matrix `T[i][j] = seed[n − 1 + i − j]`
/// over GF(2).
pub fn toeplitz_hash(key: &[bool], out_len: usize, seed: &[bool]) -> Result<Vec<bool>> {
    let n = key.len();
    if out_len > n {
        return Err(Error::Argument(format!("output length {out_len} exceeds key length {n}")));
    }
    if out_len == 0 {
        return Ok(Vec::new());
    }
    if seed.len() != n + out_len - 1 {
        return Err(Error::Argument(format!(
            "seed length {} must be key length + output length − 1 = {}",
            seed.len(),
            n + out_len - 1
        )));
    }
    // Row i is seed[i..i + n] against the reversed key.
    let rev = pack(key.iter().rev().copied());
    let s = pack(seed.iter().copied());
    let full = n / 64;
    let tail = n % 64;
    let tail_mask = if tail == 0 { 0 } else { (1u64 << tail) - 1 };
    Ok((0..out_len)
        .map(|i| {
            let mut acc = 0u64;
            for q in 0..full {
                acc ^= window(&s, i + 64 * q) & rev[q];
            }
            if tail > 0 {
                acc ^= window(&s, i + 64 * full) & rev[full] & tail_mask;
            }
            acc.count_ones() & 1 == 1
        })
        .collect())
}

/// Expands an agreed 64-bit seed into Toeplitz seed bits.
pub fn toeplitz_seed(seed: u64, len: usize) -> Vec<bool> {
    let mut rng = rng_stream(seed, 0x5041);
    (0..len).map(|_| rng.random()).collect()
}

/// Hash with a seed expanded by [`toeplitz_seed`].
pub fn toeplitz_hash_seeded(key: &[bool], out_len: usize, seed: u64) -> Result<Vec<bool>> {
    if out_len == 0 {
        return Ok(Vec::new());
    }
    toeplitz_hash(key, out_len, &toeplitz_seed(seed, key.len() + out_len - 1))
}
