use serde::{Deserialize, Serialize};

use super::entropy::h2;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteKeyParams {
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Reconciled key bits.
    pub n_z: u64,
    /// X-basis test events.
    pub n_x: u64,
    pub e_x: f64,
    /// Bits disclosed by error correction.
    pub leak_ec: f64,
    /// Reconciliation efficiency used when predicting `leak_ec`.
    pub f_ec: f64,
}

impl Default for FiniteKeyParams {
    fn default() -> Self {
        Self {
            eps_sec: 1e-9,
            eps_cor: 1e-15,
            n_z: 0,
            n_x: 0,
            e_x: 0.0,
            leak_ec: 0.0,
            f_ec: 1.2,
        }
    }
}

impl FiniteKeyParams {
    /// Sets `leak_ec = f_ec · h2(qber_z) · n_z`.
    pub fn with_predicted_leak(mut self, qber_z: f64) -> Self {
        self.leak_ec = self.f_ec * h2(qber_z) * self.n_z as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let eps_ok = |e: f64| e > 0.0 && e < 1.0;
        if !eps_ok(self.eps_sec) || !eps_ok(self.eps_cor) {
            return Err(Error::Range("epsilons must lie in (0, 1)".into()));
        }
        if !(0.0..=0.5).contains(&self.e_x) {
            return Err(Error::Range(format!("e_x = {} outside [0, 0.5]", self.e_x)));
        }
        if !(self.leak_ec >= 0.0) {
            return Err(Error::Range("leak_ec must be non-negative".into()));
        }
        if self.n_z == 0 || self.n_x == 0 {
            return Err(Error::Precondition("n_z and n_x must be positive".into()));
        }
        Ok(())
    }
}

/// Statistical deviation of the phase error rate from the measured `e_x`.
pub fn finite_size_deviation(n_z: f64, n_x: f64, eps_pe: f64) -> f64 {
    (((n_z + n_x) * (n_x + 1.0)) / (n_z * n_x * n_x) * (2.0 / eps_pe).ln()).sqrt()
}

/// Real-valued budget `n_z(1 − h2(e_x + ν)) − leak_ec − penalties`, or `None`
/// when `e_x + ν ≥ 1/2`.
pub fn secrecy_budget(p: &FiniteKeyParams) -> Result<Option<f64>> {
    p.validate()?;
    let eps_half = p.eps_sec / 2.0;
    let (n_z, n_x) = (p.n_z as f64, p.n_x as f64);
    let e = p.e_x + finite_size_deviation(n_z, n_x, eps_half);
    if e >= 0.5 {
        return Ok(None);
    }
    let pa_penalty = 2.0 * (1.0 / (2.0 * eps_half)).log2();
    let cor_penalty = (2.0 / p.eps_cor).log2();
    Ok(Some(n_z * (1.0 - h2(e)) - p.leak_ec - pa_penalty - cor_penalty))
}

/// Secret bits extractable from a block; 0 aborts.
pub fn secret_length(p: &FiniteKeyParams) -> Result<u64> {
    Ok(match secrecy_budget(p)? {
        Some(b) if b > 0.0 => b.floor() as u64,
        _ => 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u64, e_x: f64) -> FiniteKeyParams {
        FiniteKeyParams { n_z: n, n_x: n, e_x, ..Default::default() }
    }

    #[test]
    fn approaches_n_z_in_the_ideal_limit() {
        let n = 1u64 << 50;
        let l = secret_length(&params(n, 0.0)).unwrap() as f64;
        assert!(l / n as f64 > 0.9999);
    }

    #[test]
    fn aborts_at_half() {
        assert_eq!(secret_length(&params(1000, 0.49)).unwrap(), 0);
        assert_eq!(secret_length(&params(1_000_000, 0.5)).unwrap(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(secret_length(&params(0, 0.01)).is_err());
        assert!(secret_length(&FiniteKeyParams { eps_sec: 0.0, ..params(10, 0.0) }).is_err());
        assert!(secret_length(&FiniteKeyParams { leak_ec: -1.0, ..params(10, 0.0) }).is_err());
    }
}
