//! Computes finite-key secret lengths for a reconciled block and compresses
//! it with a seeded Toeplitz hash.

use qkdlink::linksim::rng_stream;
use qkdlink::pa::{h2, secret_length, toeplitz_hash_seeded, FiniteKeyParams};
use rand::Rng;

fn main() -> qkdlink::Result<()> {
    for n in [1u64 << 12, 1 << 16, 1 << 20, 1 << 24] {
        let p = FiniteKeyParams { n_z: n, n_x: n, e_x: 0.047, ..Default::default() }.with_predicted_leak(0.043);
        let l = secret_length(&p)?;
        println!("n_z = {n:>9}: secret {l:>9} bits ({:.3} per bit)", l as f64 / n as f64);
    }
    println!("asymptotic fraction {:.3}", 1.0 - h2(0.047) - 1.2 * h2(0.043));

    let mut rng = rng_stream(3, 0);
    let key: Vec<bool> = (0..65_536).map(|_| rng.random()).collect();
    let p = FiniteKeyParams { n_z: key.len() as u64, n_x: key.len() as u64, e_x: 0.047, leak_ec: 18_000.0, ..Default::default() };
    let out = secret_length(&p)? as usize;
    let secret = toeplitz_hash_seeded(&key, out, 0xFEED)?;
    let ones = secret.iter().filter(|&&b| b).count();
    println!("hashed {} bits to {} ({} ones)", key.len(), secret.len(), ones);
    Ok(())
}
