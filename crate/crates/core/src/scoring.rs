//! Point and probabilistic prediction scores.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;

/// Gaussian mixture predictive at one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMixture {
    means: Vec<f64>,
    variances: Vec<f64>,
    weights: Vec<f64>,
}

impl PredictiveMixture {
    pub fn new(means: Vec<f64>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = means.len();
        if n == 0 || variances.len() != n || weights.len() != n {
            return Err(Error::InvalidInput(format!(
                "mixture needs equal nonzero lengths, got {} means, {} variances, {} weights",
                n,
                variances.len(),
                weights.len()
            )));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("mixture means must be finite".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("mixture variances must be positive".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be >= 0".into()));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(PredictiveMixture {
            means,
            variances,
            weights,
        })
    }

    pub fn equal_weights(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        let weights = vec![w; means.len()];
        Self::new(means, variances, weights)
    }

    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], vec![variance], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        let terms: Vec<f64> = self.weights.iter().zip(&self.means).map(|(w, m)| w * m).collect();
        pairwise_sum(&terms)
    }

    /// Law of total variance.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| w * (v + (m - mu) * (m - mu)))
            .collect();
        pairwise_sum(&terms)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E|X|` for `X ~ N(mu, v)`.
fn abs_moment(mu: f64, v: f64) -> f64 {
    let sd = v.sqrt();
    let z = mu / sd;
    mu * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * sd * std_normal_pdf(z)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "score needs equal nonzero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    let terms: Vec<f64> = pred.iter().zip(y).map(|(p, t)| (p - t).abs()).collect();
    Ok(pairwise_sum(&terms) / y.len() as f64)
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(pred, y)?;
    let terms: Vec<f64> = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).collect();
    Ok((pairwise_sum(&terms) / y.len() as f64).sqrt())
}

/// Closed-form CRPS of a Gaussian mixture at observation `y`.
pub fn crps_mixture(mix: &PredictiveMixture, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::InvalidInput(format!("observation must be finite, got {y}")));
    }
    let (mu, v, w) = (&mix.means, &mix.variances, &mix.weights);
    let n = mu.len();
    let first: Vec<f64> = (0..n).map(|i| w[i] * abs_moment(y - mu[i], v[i])).collect();
    let mut cross = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = w[i] * w[i] * abs_moment(0.0, 2.0 * v[i]);
        for j in (i + 1)..n {
            row += 2.0 * w[i] * w[j] * abs_moment(mu[i] - mu[j], v[i] + v[j]);
        }
        cross.push(row);
    }
    Ok((pairwise_sum(&first) - 0.5 * pairwise_sum(&cross)).max(0.0))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Energy score of a sample-based joint predictive.
///
/// Samples are visited in lexicographic order, so the result does not
/// depend on the order in which they are supplied.
pub fn energy_score(samples: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("energy score needs at least one sample".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != y.len()) {
        return Err(Error::InvalidInput(format!(
            "sample of dimension {} against observation of dimension {}",
            bad.len(),
            y.len()
        )));
    }
    let mut sorted: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
    sorted.sort_by(|a, b| lexicographic(a, b));
    let m = sorted.len() as f64;
    let fit: Vec<f64> = sorted.iter().map(|x| euclid(x, y)).collect();
    let mut row = Vec::with_capacity(sorted.len());
    let spread: Vec<f64> = (0..sorted.len())
        .map(|i| {
            row.clear();
            row.extend(sorted[i + 1..].iter().map(|b| euclid(sorted[i], b)));
            pairwise_sum(&row)
        })
        .collect();
    // off-diagonal pairs counted twice in the double sum
    let spread = 2.0 * pairwise_sum(&spread);
    Ok((pairwise_sum(&fit) / m - spread / (2.0 * m * m)).max(0.0))
}
