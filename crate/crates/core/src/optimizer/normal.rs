use crate::error::{Error, Result};

/// Standard normal CDF, Φ(z) = erfc(−z/√2)/2.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite("std_normal_cdf"));
    }
    Ok(0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2))
}
