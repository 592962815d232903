use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

/// Error-fraction estimate with a two-sided 95 % Clopper–Pearson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub n: u64,
    pub k: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl QberEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn qber_confidence(n: u64, k: u64) -> crate::Result<QberEstimate> {
    if n == 0 || k > n {
        return Err(crate::Error::Argument(format!("need n > 0 and k <= n, got n={n}, k={k}")));
    }
    let alpha = 0.05;
    let (nf, kf) = (n as f64, k as f64);
    let lower = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).expect("positive shape").inverse_cdf(alpha / 2.0)
    };
    let upper = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).expect("positive shape").inverse_cdf(1.0 - alpha / 2.0)
    };
    Ok(QberEstimate {
        n,
        k,
        estimate: kf / nf,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_errors_closed_form() {
        let q = qber_confidence(1000, 0).unwrap();
        assert_eq!(q.estimate, 0.0);
        assert!((q.upper - (1.0 - 0.025f64.powf(1e-3))).abs() < 1e-9);
        assert!((q.upper - 0.00368).abs() < 1e-5);
    }

    #[test]
    fn half_and_errors() {
        assert_eq!(qber_confidence(1000, 500).unwrap().estimate, 0.5);
        assert!(qber_confidence(0, 0).is_err());
        assert!(qber_confidence(5, 6).is_err());
    }
}
