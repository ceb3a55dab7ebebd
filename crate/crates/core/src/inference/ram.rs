//! Robust adaptive Metropolis.
//!
//! Proposals are `Y = X + S U` with `U ~ N(0, I)`. After every step the
//! lower-triangular `S` is refactored from
//!
//! ```text
//! S (I + η_t (α_t − α*) U Uᵀ / ‖U‖²) Sᵀ,    η_t = t^{−2/3}
//! ```
//!
//! which drives the acceptance rate toward `α*`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Chain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RamConfig {
    pub n_iter: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// `S₀ = initial_scale · I`.
    pub initial_scale: f64,
    /// With `false` the proposal stays at `S₀` (plain random-walk Metropolis).
    pub adapt: bool,
}

impl Default for RamConfig {
    fn default() -> Self {
        RamConfig {
            n_iter: 5000,
            seed: 0,
            target_accept: 0.234,
            initial_scale: 0.1,
            adapt: true,
        }
    }
}

impl RamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(self.initial_scale > 0.0 && self.initial_scale.is_finite()) {
            return Err(Error::Config("initial_scale must be positive".into()));
        }
        Ok(())
    }
}

fn sanitize(lp: f64) -> f64 {
    if lp.is_nan() {
        log::warn!("target density returned NaN; proposal rejected");
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Runs the sampler from `init`. `names` label the coordinates.
pub fn run_mcmc<F>(mut target: F, init: &[f64], names: Vec<String>, cfg: &RamConfig) -> Result<Chain>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let d = init.len();
    if d == 0 || names.len() != d {
        return Err(Error::InvalidInput(format!(
            "chain needs {} names for {} coordinates",
            d,
            names.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = DVector::from_column_slice(init);
    let mut lp = sanitize(target(x.as_slice()));
    if lp == f64::NEG_INFINITY {
        return Err(Error::InvalidInput("initial state has zero posterior density".into()));
    }
    let mut s = DMatrix::<f64>::identity(d, d) * cfg.initial_scale;
    let mut chain = Chain::with_capacity(names, cfg.n_iter);
    let mut u = DVector::<f64>::zeros(d);
    for t in 1..=cfg.n_iter {
        for ui in u.iter_mut() {
            *ui = rng.sample(StandardNormal);
        }
        let y = &x + &s * &u;
        let lp_y = sanitize(target(y.as_slice()));
        let log_ratio = lp_y - lp;
        let alpha = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
        let draw: f64 = rng.random();
        let accepted = draw < alpha;
        if accepted {
            x = y;
            lp = lp_y;
        }
        if cfg.adapt {
            let eta = (t as f64).powf(-2.0 / 3.0);
            let su = &s * &u;
            let weight = eta * (alpha - cfg.target_accept) / u.norm_squared();
            let mut cov = &s * s.transpose();
            cov.ger(weight, &su, &su, 1.0);
            // (1 + η(α − α*)) > 0, so this stays SPD up to rounding
            if let Some(ch) = cov.cholesky() {
                s = ch.l();
            } else {
                log::warn!("proposal covariance lost definiteness at iteration {t}; keeping previous scale");
            }
        }
        let sd: Vec<f64> = (0..d).map(|i| s.row(i).norm()).collect();
        chain.push(x.as_slice().to_vec(), lp, accepted, sd);
    }
    Ok(chain)
}
