use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF. Absolute error is below 1e-7 everywhere (the
/// underlying `erfc` is accurate to a few ulps).
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite {
            context: "std_normal_cdf argument".into(),
        });
    }
    Ok(cdf(x))
}

#[inline]
pub(crate) fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `φ(x) / Φ(x)`, stable in the lower tail.
pub(crate) fn inverse_mills(x: f64) -> f64 {
    if x > -30.0 {
        std_normal_pdf(x) / cdf(x)
    } else {
        // asymptotic expansion of φ/Φ for x → -∞
        let x2 = x * x;
        -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    }
}

/// `ln Φ(x)`, stable in the lower tail.
pub(crate) fn log_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}
