use rand::Rng;

use crate::model::BasisOutcome;

/// Joint X outcomes of a central-peak pair: equal with probability
/// `(1 + V·cos(φ_A + φ_B))/2`, each marginal uniform.
pub fn franson_outcome<R: Rng>(phase_a: f64, phase_b: f64, visibility: f64, rng: &mut R) -> (BasisOutcome, BasisOutcome) {
    let p_equal = (1.0 + visibility * (phase_a + phase_b).cos()) / 2.0;
    let a = rng.random_bool(0.5);
    let b = if rng.random::<f64>() < p_equal { a } else { !a };
    let map = |v: bool| if v { BasisOutcome::XMinus } else { BasisOutcome::XPlus };
    (map(a), map(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linksim::rng_stream;
    use std::f64::consts::PI;

    #[test]
    fn limits() {
        let mut rng = rng_stream(1, 0);
        for _ in 0..1000 {
            let (a, b) = franson_outcome(0.3, -0.3, 1.0, &mut rng);
            assert_eq!(a, b);
            let (a, b) = franson_outcome(PI / 2.0, PI / 2.0, 1.0, &mut rng);
            assert_ne!(a, b);
        }
    }
}
