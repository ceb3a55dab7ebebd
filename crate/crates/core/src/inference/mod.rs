//! Bayesian fitting of the covariance parameters and the resulting
//! posterior predictive.
//!
//! Sampling happens on an unconstrained scale: β coefficients are used as
//! they are and `κ = (π/2)·logistic(raw)`.

mod ram;

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ram::{run_mcmc, RamConfig};

use crate::covariance::{CovarianceModel, ModelKind};
use crate::error::{Error, Result};
use crate::geometry::SphericalPoint;
use crate::scoring::PredictiveMixture;
use crate::vecchia::{vecchia_loglik, GaussianPredictive, PredictionPlan, VecchiaPlan};

fn logistic(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Free parameters of a [`ModelKind`] on the sampling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub kind: ModelKind,
    pub raw: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(kind: ModelKind) -> Self {
        ParamVector {
            kind,
            raw: vec![0.0; kind.n_free()],
        }
    }

    pub fn from_raw(kind: ModelKind, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != kind.n_free() {
            return Err(Error::InvalidInput(format!(
                "{kind} model has {} free parameters, got {}",
                kind.n_free(),
                raw.len()
            )));
        }
        Ok(ParamVector { kind, raw })
    }

    /// Inverse of [`ParamVector::constrained`].
    pub fn from_constrained(kind: ModelKind, values: &[f64]) -> Result<Self> {
        let mut raw = values.to_vec();
        if kind == ModelKind::GeneralNonstationary {
            let k = *raw.last().unwrap_or(&f64::NAN);
            if !(k > 0.0 && k < FRAC_PI_2) {
                return Err(Error::InvalidInput(format!("kappa must lie in (0, pi/2), got {k}")));
            }
            let p = k / FRAC_PI_2;
            *raw.last_mut().unwrap() = (p / (1.0 - p)).ln();
        }
        Self::from_raw(kind, raw)
    }

    /// Values in the order of [`ModelKind::param_names`].
    pub fn constrained(&self) -> Vec<f64> {
        let mut out = self.raw.clone();
        if self.kind == ModelKind::GeneralNonstationary {
            if let Some(last) = out.last_mut() {
                *last = FRAC_PI_2 * logistic(*last);
            }
        }
        out
    }

    /// `log |dθ/draw|`; nonzero only when κ is sampled.
    pub fn log_jacobian(&self) -> f64 {
        match (self.kind, self.raw.last()) {
            (ModelKind::GeneralNonstationary, Some(&r)) => FRAC_PI_2.ln() - softplus(r) - softplus(-r),
            _ => 0.0,
        }
    }

    /// Column labels for the sampling scale.
    pub fn raw_names(kind: ModelKind) -> Vec<String> {
        kind.param_names()
            .iter()
            .map(|&n| if n == "kappa" { "kappa_logit".to_string() } else { n.to_string() })
            .collect()
    }
}

/// Prior on the free parameters. κ, when sampled, is uniform on `[0, π/2)`
/// under either choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum Prior {
    /// Independent `N(0, sd²)` on each β coefficient.
    Normal { sd: f64 },
    Flat,
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Normal { sd: 10.0 }
    }
}

impl Prior {
    /// Log density on the constrained scale.
    pub fn log_density(&self, p: &ParamVector) -> f64 {
        let values = p.constrained();
        let (betas, kappa) = match p.kind {
            ModelKind::GeneralNonstationary => (&values[..values.len() - 1], Some(values[values.len() - 1])),
            _ => (&values[..], None),
        };
        let kappa_term = kappa.map_or(0.0, |_| (2.0 / PI).ln());
        match *self {
            Prior::Flat => kappa_term,
            Prior::Normal { sd } => {
                let norm = -(sd * (2.0 * PI).sqrt()).ln();
                betas.iter().map(|b| norm - 0.5 * (b / sd) * (b / sd)).sum::<f64>() + kappa_term
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Normal { sd } if !(sd > 0.0 && sd.is_finite()) => {
                Err(Error::Config(format!("prior sd must be positive, got {sd}")))
            }
            _ => Ok(()),
        }
    }
}

/// Parameters held fixed while sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedParams {
    pub sigma: f64,
    pub nu: f64,
    pub nugget: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        FixedParams {
            sigma: 1.0,
            nu: 0.5,
            nugget: 1e-8,
        }
    }
}

impl FixedParams {
    pub fn model(&self, p: &ParamVector) -> Result<CovarianceModel> {
        CovarianceModel::from_free(p.kind, &p.constrained(), self.sigma, self.nu, self.nugget)
    }
}

/// Vecchia posterior over the free parameters of one model kind.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub kind: ModelKind,
    pub locs: &'a [SphericalPoint],
    pub y: &'a [f64],
    pub plan: &'a VecchiaPlan,
    pub fixed: FixedParams,
    pub prior: Prior,
}

impl Posterior<'_> {
    /// Log posterior density of `raw` on the sampling scale. Parameters that
    /// overflow the scale link or break factorization give `−∞`.
    pub fn log_density(&self, raw: &[f64]) -> f64 {
        let p = match ParamVector::from_raw(self.kind, raw.to_vec()) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        log_posterior(&p, self)
    }
}

pub fn log_posterior(p: &ParamVector, post: &Posterior<'_>) -> f64 {
    let model = match post.fixed.model(p) {
        Ok(m) => m,
        Err(_) => return f64::NEG_INFINITY,
    };
    match vecchia_loglik(&model, post.locs, post.y, post.plan) {
        Ok(ll) => ll + post.prior.log_density(p) + p.log_jacobian(),
        Err(e @ (Error::ParameterOverflow { .. } | Error::NumericalSingularity { .. })) => {
            log::debug!("rejecting {:?}: {e}", p.raw);
            f64::NEG_INFINITY
        }
        Err(e) => {
            log::warn!("likelihood failed at {:?}: {e}", p.raw);
            f64::NEG_INFINITY
        }
    }
}

/// MCMC output on the sampling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub log_posts: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Per-iteration proposal standard deviation of each coordinate.
    pub scale_history: Vec<Vec<f64>>,
}

impl Chain {
    fn with_capacity(names: Vec<String>, n: usize) -> Self {
        Chain {
            names,
            draws: Vec::with_capacity(n),
            log_posts: Vec::with_capacity(n),
            accepted: Vec::with_capacity(n),
            scale_history: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, draw: Vec<f64>, log_post: f64, accepted: bool, scale: Vec<f64>) {
        self.draws.push(draw);
        self.log_posts.push(log_post);
        self.accepted.push(accepted);
        self.scale_history.push(scale);
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Draws kept for prediction: after `burn_in`, every `thin`-th, then at
    /// most `cap` evenly spaced ones (`cap = 0` keeps all).
    pub fn retained_indices(&self, burn_in: usize, thin: usize, cap: usize) -> Result<Vec<usize>> {
        if burn_in >= self.len() {
            return Err(Error::Config(format!(
                "burn_in {} leaves no draws from a chain of length {}",
                burn_in,
                self.len()
            )));
        }
        if thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        let kept: Vec<usize> = (burn_in..self.len()).step_by(thin).collect();
        if cap == 0 || kept.len() <= cap {
            return Ok(kept);
        }
        Ok((0..cap).map(|k| kept[k * kept.len() / cap]).collect())
    }

    /// Posterior mean of each coordinate on the constrained scale.
    pub fn posterior_means(&self, kind: ModelKind, burn_in: usize) -> Result<Vec<f64>> {
        let idx = self.retained_indices(burn_in, 1, 0)?;
        let mut acc = vec![0.0; kind.n_free()];
        for &i in &idx {
            let p = ParamVector::from_raw(kind, self.draws[i].clone())?;
            for (a, v) in acc.iter_mut().zip(p.constrained()) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|a| a / idx.len() as f64).collect())
    }

    /// One row per iteration: `iter`, raw coordinates, `log_post`,
    /// `accepted`, then the proposal scale of each coordinate as `sd_<name>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iter".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("log_post".into());
        header.push("accepted".into());
        header.extend(self.names.iter().map(|n| format!("sd_{n}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.draws[i].iter().map(|v| v.to_string()));
            rec.push(self.log_posts[i].to_string());
            rec.push(u8::from(self.accepted[i]).to_string());
            rec.extend(self.scale_history[i].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let Some(lp_col) = header.iter().position(|h| h == "log_post") else {
            return Err(parse_err(1, "missing log_post column".into()));
        };
        if header.first().map(String::as_str) != Some("iter") || lp_col < 2 {
            return Err(parse_err(1, "expected iter, parameters..., log_post".into()));
        }
        let d = lp_col - 1;
        if header.len() != 2 * d + 3 || header.get(lp_col + 1).map(String::as_str) != Some("accepted") {
            return Err(parse_err(1, "unexpected chain columns".into()));
        }
        let names = header[1..lp_col].to_vec();
        let mut chain = Chain::with_capacity(names, 0);
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(parse_err(line, format!("expected {} fields, got {}", header.len(), rec.len())));
            }
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("non-numeric field '{}'", &rec[j])))
            };
            let draw = (1..=d).map(num).collect::<Result<Vec<_>>>()?;
            let lp = num(lp_col)?;
            let accepted = match rec[lp_col + 1].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(parse_err(line, format!("bad accepted flag '{other}'"))),
            };
            let sd = ((lp_col + 2)..header.len()).map(num).collect::<Result<Vec<_>>>()?;
            chain.push(draw, lp, accepted, sd);
        }
        Ok(chain)
    }
}

/// Prediction settings shared by the predictive summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictiveConfig {
    pub burn_in: usize,
    pub thin: usize,
    /// Largest number of retained draws; 0 keeps all.
    pub max_draws: usize,
    pub m: usize,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        PredictiveConfig {
            burn_in: 1000,
            thin: 1,
            max_draws: 500,
            m: 10,
        }
    }
}

/// Equal-weight Gaussian mixture per test location, one component per
/// retained draw.
pub fn posterior_predictive<B>(
    chain: &Chain,
    cfg: &PredictiveConfig,
    build: B,
    train_locs: &[SphericalPoint],
    y_train: &[f64],
    test_locs: &[SphericalPoint],
) -> Result<Vec<PredictiveMixture>>
where
    B: Fn(&[f64]) -> Result<CovarianceModel>,
{
    let idx = chain.retained_indices(cfg.burn_in, cfg.thin, cfg.max_draws)?;
    let plan = PredictionPlan::build(train_locs, test_locs, cfg.m)?;
    let mut per_draw: Vec<Vec<GaussianPredictive>> = Vec::with_capacity(idx.len());
    let mut last: Option<&[f64]> = None;
    for &i in &idx {
        let draw = chain.draws[i].as_slice();
        // rejected proposals repeat the previous state
        if last == Some(draw) {
            let prev = per_draw.last().cloned().expect("previous draw cached");
            per_draw.push(prev);
            continue;
        }
        let model = build(draw)?;
        per_draw.push(plan.predict(&model, train_locs, y_train, test_locs)?);
        last = Some(draw);
    }
    (0..test_locs.len())
        .map(|t| {
            let means = per_draw.iter().map(|p| p[t].mean).collect();
            let vars = per_draw.iter().map(|p| p[t].variance).collect();
            PredictiveMixture::equal_weights(means, vars)
        })
        .collect()
}
