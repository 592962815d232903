//! Privacy amplification and finite-key accounting.
//!
//! The secret length of a block of `n_z` reconciled key bits, tested with `n_x`
//! X-basis events showing error rate `e_x`, is
//!
//! ```text
//! ℓ = ⌊ n_z (1 − h2(e_x + ν)) − leak_ec − 2 log2(1 / (2 ε_pa)) − log2(2 / ε_cor) ⌋⁺
//! ν = sqrt( (n_z + n_x)(n_x + 1) / (n_z n_x²) · ln(2 / ε') )
//! ```
//!
//! with `ε_sec` split equally into `ε'` and `ε_pa`. Keys are compressed with
//! a Toeplitz matrix expanded from a seed both stations agree on.

mod entropy;
mod finite;
mod keystore;
mod skr;
mod toeplitz;

pub use entropy::h2;
pub use finite::{finite_size_deviation, secrecy_budget, secret_length, FiniteKeyParams};
pub use keystore::{read_keystore, KeyProvenance, KeyStore, SecretKey, KEYSTORE_MAGIC};
pub use skr::{optimal_pair_rate, skr_model, SkrModel, SkrPrediction};
pub use toeplitz::{toeplitz_hash, toeplitz_hash_seeded, toeplitz_seed};
