//! Regular lon/lat grids and exact Gaussian-process draws.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{covariance_matrix, CovarianceModel};
use crate::error::{Error, Result};
use crate::geometry::SphericalPoint;

/// Largest point count for dense simulation.
pub const MAX_SIMULATION_POINTS: usize = 5000;

/// Largest diagonal jitter, relative to the mean variance, tried before
/// giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_lon: usize,
    pub n_lat: usize,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.n_lon * self.n_lat
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n_lon` longitudes `−π + 2πk/n_lon` crossed with the centres of `n_lat`
/// equal latitude bands; latitude varies slowest. Poles are never included.
pub fn latlon_grid(spec: &GridSpec) -> Vec<SphericalPoint> {
    let mut out = Vec::with_capacity(spec.len());
    for j in 0..spec.n_lat {
        let lat = -FRAC_PI_2 + PI * (j as f64 + 0.5) / spec.n_lat as f64;
        for k in 0..spec.n_lon {
            let lon = -PI + 2.0 * PI * k as f64 / spec.n_lon as f64;
            out.push(SphericalPoint { lon, lat });
        }
    }
    out
}

/// Cholesky factor of a covariance matrix, reusable across seeds.
#[derive(Debug, Clone)]
pub struct GpSampler {
    chol: DMatrix<f64>,
}

impl GpSampler {
    pub fn new(model: &CovarianceModel, locs: &[SphericalPoint]) -> Result<Self> {
        if locs.len() > MAX_SIMULATION_POINTS {
            return Err(Error::InvalidInput(format!(
                "dense simulation supports at most {MAX_SIMULATION_POINTS} points, got {}",
                locs.len()
            )));
        }
        let c = covariance_matrix(locs, model)?;
        let n = c.nrows();
        let mean_var = if n == 0 { 1.0 } else { c.trace() / n as f64 };
        let mut jitter = 0.0;
        loop {
            let mut cj = c.clone();
            for i in 0..n {
                cj[(i, i)] += jitter * mean_var;
            }
            if let Some(ch) = cj.cholesky() {
                if jitter > 0.0 {
                    log::warn!("simulation covariance needed jitter {jitter:e}");
                }
                return Ok(GpSampler { chol: ch.unpack() });
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
            if jitter > MAX_JITTER * (1.0 + 1e-9) {
                return Err(Error::SimulationInfeasible { max_jitter: MAX_JITTER });
            }
        }
    }

    pub fn len(&self) -> usize {
        self.chol.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `L z` with `z` standard normal (ChaCha8, ziggurat).
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.chol * z).as_slice().to_vec()
    }
}

/// One exact draw of the zero-mean process at `locs`.
pub fn sample_gp(model: &CovarianceModel, locs: &[SphericalPoint], seed: u64) -> Result<Vec<f64>> {
    Ok(GpSampler::new(model, locs)?.sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{covariance, ModelKind};

    #[test]
    fn grid_shapes() {
        let g = latlon_grid(&GridSpec { n_lon: 50, n_lat: 50 });
        assert_eq!(g.len(), 2500);
        let one = latlon_grid(&GridSpec { n_lon: 1, n_lat: 1 });
        assert_eq!(one, vec![SphericalPoint { lon: -PI, lat: 0.0 }]);
        let g = latlon_grid(&GridSpec { n_lon: 6, n_lat: 4 });
        assert_eq!(g[1].lat, g[0].lat);
        assert!(g[6].lat > g[0].lat);
        assert!(g.iter().all(|s| s.lat.abs() < FRAC_PI_2 && (-PI..PI).contains(&s.lon)));
        for i in 0..g.len() {
            for j in 0..i {
                assert_ne!(g[i], g[j]);
            }
        }
    }

    #[test]
    fn single_point_is_standard_normal() {
        let model = CovarianceModel::reference_truth(ModelKind::Isotropic);
        let y = sample_gp(&model, &[SphericalPoint::new(0.3, 0.1)], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: f64 = rng.sample(StandardNormal);
        assert_eq!(y, vec![z]);
    }

    #[test]
    fn deterministic_per_seed() {
        let locs = latlon_grid(&GridSpec { n_lon: 8, n_lat: 6 });
        let model = CovarianceModel::reference_truth(ModelKind::GeneralNonstationary);
        let a = sample_gp(&model, &locs, 1).unwrap();
        assert_eq!(a, sample_gp(&model, &locs, 1).unwrap());
        assert_ne!(a, sample_gp(&model, &locs, 2).unwrap());
    }

    #[test]
    fn too_many_points() {
        let locs = latlon_grid(&GridSpec { n_lon: 100, n_lat: 51 });
        let model = CovarianceModel::reference_truth(ModelKind::Isotropic);
        assert!(matches!(sample_gp(&model, &locs, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn duplicate_points_without_nugget_fail() {
        let s = SphericalPoint::new(0.1, 0.2);
        let model = CovarianceModel::reference_truth(ModelKind::Isotropic);
        assert!(sample_gp(&model, &[s, s], 0).is_err());
    }

    #[test]
    fn unit_marginal_variance_on_full_grid() {
        let locs = latlon_grid(&GridSpec { n_lon: 50, n_lat: 50 });
        let model = CovarianceModel::reference_truth(ModelKind::Isotropic);
        let sampler = GpSampler::new(&model, &locs).unwrap();
        // pooled second moment about the known zero mean
        let mut acc = 0.0;
        for seed in 0..5 {
            acc += sampler.sample(seed).iter().map(|v| v * v).sum::<f64>();
        }
        let var = acc / (5 * locs.len()) as f64;
        assert!((0.7..=1.3).contains(&var), "{var}");
    }

    fn empirical_corr(sampler: &GpSampler, i: usize, j: usize, reps: u64) -> f64 {
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for seed in 0..reps {
            let y = sampler.sample(1000 + seed);
            sxy += y[i] * y[j];
            sxx += y[i] * y[i];
            syy += y[j] * y[j];
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn replicate_correlation_matches_model() {
        let locs = latlon_grid(&GridSpec { n_lon: 12, n_lat: 8 });
        let model = CovarianceModel::reference_truth(ModelKind::GeneralNonstationary);
        let sampler = GpSampler::new(&model, &locs).unwrap();
        let (i, j) = (40, 41);
        let rho = covariance(locs[i], locs[j], &model).unwrap();
        let got = empirical_corr(&sampler, i, j, 500);
        let se = (1.0 - rho * rho) / (500f64).sqrt();
        assert!((got - rho).abs() < 3.0 * se, "{got} vs {rho}");
    }

    #[test]
    fn axial_longitude_shift_correlations_agree() {
        let locs = latlon_grid(&GridSpec { n_lon: 12, n_lat: 8 });
        let model = CovarianceModel::reference_truth(ModelKind::AxiallySymmetric);
        let sampler = GpSampler::new(&model, &locs).unwrap();
        // same latitude pair, shifted by three longitude steps
        let a = empirical_corr(&sampler, 36, 37, 500);
        let b = empirical_corr(&sampler, 39, 40, 500);
        let rho = covariance(locs[36], locs[37], &model).unwrap();
        let se = (1.0 - rho * rho) / (500f64).sqrt();
        assert!((a - b).abs() < 3.0 * 2f64.sqrt() * se, "{a} vs {b}");
    }
}
