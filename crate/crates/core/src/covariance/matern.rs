use statrs::function::gamma::ln_gamma;

use super::bessel::bessel_k_scaled;
use crate::error::{Error, Result};

/// Unit-range Matérn correlation `2^{1−ν}/Γ(ν) · r^ν K_ν(r)`, with value 1
/// at `r = 0`.
///
/// Orders 0.5, 1.5 and 2.5 use their exponential-polynomial closed forms;
/// every other order goes through the Bessel function.
pub fn matern(r: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidSmoothness(nu));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("Matérn distance must be >= 0, got {r}")));
    }
    Ok(matern_unchecked(r, nu))
}

#[inline]
pub(crate) fn matern_unchecked(r: f64, nu: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        (-r).exp()
    } else if nu == 1.5 {
        (1.0 + r) * (-r).exp()
    } else if nu == 2.5 {
        (1.0 + r + r * r / 3.0) * (-r).exp()
    } else {
        matern_bessel(r, nu)
    }
}

/// General-order path, evaluated in log space.
pub(crate) fn matern_bessel(r: f64, nu: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let log_val = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * r.ln()
        + bessel_k_scaled(nu, r).ln()
        - r;
    log_val.exp().min(1.0)
}
