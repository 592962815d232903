use crate::{Error, Result};

/// Converts a loss in dB to a power transmission `10^(-L/10)`.
pub fn loss_to_transmission(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) || !loss_db.is_finite() {
        return Err(Error::Argument(format!("loss must be a finite non-negative dB value, got {loss_db}")));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Inverse of [`loss_to_transmission`] for transmissions in (0, 1].
pub fn transmission_to_loss(t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Argument(format!("transmission must lie in (0, 1], got {t}")));
    }
    Ok(-10.0 * t.log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(loss_to_transmission(0.0).unwrap(), 1.0);
        assert!((loss_to_transmission(10.0).unwrap() - 0.1).abs() < 1e-15);
        // 10^(-3.35) evaluated independently
        assert!((loss_to_transmission(33.5).unwrap() - 4.466_835_921_509_635e-4).abs() < 1e-16);
        assert!(loss_to_transmission(-1.0).is_err());
        assert!(loss_to_transmission(f64::NAN).is_err());
    }

    #[test]
    fn round_trip() {
        for l in [0.0, 0.1, 3.0, 20.0, 33.5, 56.6] {
            let t = loss_to_transmission(l).unwrap();
            assert!((transmission_to_loss(t).unwrap() - l).abs() < 1e-12);
        }
    }
}
