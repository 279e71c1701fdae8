use std::f64::consts::FRAC_1_SQRT_2;

use super::EntropyError;

/// Mass of a zero-mean Gaussian with scale `sigma` on `[q - 0.5, q + 0.5]`.
pub fn discretized_gaussian_pmf(q: i64, sigma: f64) -> Result<f64, EntropyError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(EntropyError::Domain(format!("sigma must be positive and finite, got {sigma}")));
    }
    let a = q.unsigned_abs() as f64;
    let s = FRAC_1_SQRT_2 / sigma;
    Ok(if a == 0.0 {
        libm::erf(0.5 * s)
    } else {
        // Upper-tail difference; symmetric in q and free of cancellation.
        0.5 * (libm::erfc((a - 0.5) * s) - libm::erfc((a + 0.5) * s))
    })
}

/// Mass outside `[lo - 0.5, hi + 0.5]`.
pub fn gaussian_tail_mass(lo: i64, hi: i64, sigma: f64) -> Result<f64, EntropyError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(EntropyError::Domain(format!("sigma must be positive and finite, got {sigma}")));
    }
    let s = FRAC_1_SQRT_2 / sigma;
    Ok(0.5 * libm::erfc((-(lo as f64) + 0.5) * s) + 0.5 * libm::erfc((hi as f64 + 0.5) * s))
}
