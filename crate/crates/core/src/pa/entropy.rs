/// Binary entropy in bits; `h2(p) = 0` outside `(0, 1)`.
pub fn h2(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return 0.0;
    }
    let q = 1.0 - p;
    -(p * p.log2()) - q * (-p).ln_1p() / std::f64::consts::LN_2
}
