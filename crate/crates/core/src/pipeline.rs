//! End-to-end workflow: simulate, split, fit, predict, score, and the
//! true-by-assumed model experiment grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::covariance::{CovarianceModel, ModelKind, ModelParams};
use crate::data::{random_split, region_split, Dataset, RegionSpec, Split};
use crate::error::{Error, ErrorClass, Result};
use crate::geometry::SphericalPoint;
use crate::inference::{
    posterior_predictive, run_mcmc, Chain, FixedParams, ParamVector, Posterior, PredictiveConfig, Prior, RamConfig,
};
use crate::scoring::{crps_mixture, energy_score, mae, rmse, PredictiveMixture};
use crate::simulate::{latlon_grid, GpSampler, GridSpec};
use crate::vecchia::{JointSamplingPlan, VecchiaPlan};

/// Version stamped into every JSON output except the score records.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SplitScheme {
    Random { frac: f64 },
    Region(RegionSpec),
}

impl SplitScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SplitScheme::Random { .. } => "random",
            SplitScheme::Region(_) => "region",
        }
    }

    pub fn apply(&self, d: &Dataset, seed: u64) -> Result<Split> {
        match self {
            SplitScheme::Random { frac } => random_split(d, *frac, seed),
            SplitScheme::Region(spec) => region_split(d, spec, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Cap on posterior draws used for prediction; 0 keeps all.
    pub max_draws: usize,
    pub target_accept: f64,
    pub initial_scale: f64,
    pub adapt: bool,
}

/// Named starting points for [`ExperimentConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 20×20 grid, 500 iterations.
    Desk,
    /// 50×50 grid, 5000 iterations.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected desk or paper)"))),
        }
    }
}

/// Everything a run needs. Single commands use the first entry of
/// `true_kinds` (simulate) or `assumed_kinds` (fit, predict).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub grid: GridSpec,
    pub true_kinds: Vec<ModelKind>,
    pub assumed_kinds: Vec<ModelKind>,
    /// Replaces the built-in simulation truth for the listed kinds.
    pub truths: Vec<ModelParams>,
    pub splits: Vec<SplitScheme>,
    pub replicates: usize,
    /// Vecchia conditioning set size for fitting and prediction.
    pub m: usize,
    pub mcmc: McmcSettings,
    pub fixed: FixedParams,
    pub prior: Prior,
    pub energy_draws: usize,
    /// Worker threads for experiment cells; 0 uses all cores.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let all = vec![
            ModelKind::Isotropic,
            ModelKind::AxiallySymmetric,
            ModelKind::GeneralNonstationary,
        ];
        let (grid, n_iter, burn_in) = match p {
            Preset::Desk => (GridSpec { n_lon: 20, n_lat: 20 }, 500, 100),
            Preset::Paper => (GridSpec { n_lon: 50, n_lat: 50 }, 5000, 1000),
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            grid,
            true_kinds: all.clone(),
            assumed_kinds: all,
            truths: vec![],
            splits: vec![
                SplitScheme::Random { frac: 0.2 },
                SplitScheme::Region(RegionSpec::default()),
            ],
            replicates: 5,
            m: 10,
            mcmc: McmcSettings {
                n_iter,
                burn_in,
                thin: 1,
                max_draws: 500,
                target_accept: 0.234,
                initial_scale: 0.1,
                adapt: true,
            },
            fixed: FixedParams::default(),
            prior: Prior::default(),
            energy_draws: 200,
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }

    /// `preset`, then `file` merged key by key, then `overrides`; the result
    /// is validated. Unknown keys are rejected.
    pub fn layered(preset: Preset, file: Option<Value>, overrides: Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(preset))?;
        if let Some(f) = file {
            merge_json(&mut base, f);
        }
        merge_json(&mut base, overrides);
        let cfg: ExperimentConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(preset: Preset, path: &Path, overrides: Value) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::layered(preset, Some(file), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.grid.n_lon == 0 || self.grid.n_lat == 0 {
            return bad("grid dimensions must be >= 1".into());
        }
        if self.true_kinds.is_empty() || self.assumed_kinds.is_empty() {
            return bad("true_kinds and assumed_kinds must be non-empty".into());
        }
        if self.splits.is_empty() {
            return bad("at least one split scheme is required".into());
        }
        for s in &self.splits {
            match s {
                SplitScheme::Random { frac } if !(*frac > 0.0 && *frac < 1.0) => {
                    return bad(format!("random split fraction must lie in (0, 1), got {frac}"));
                }
                SplitScheme::Region(r)
                    if !(r.target_frac > 0.0 && r.target_frac < 1.0)
                        || r.n_regions == 0
                        || !(r.lon_width > 0.0 && r.lat_width > 0.0) =>
                {
                    return bad("region split needs positive widths, n_regions >= 1, target_frac in (0, 1)".into());
                }
                _ => {}
            }
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.m == 0 {
            return bad("m must be >= 1".into());
        }
        let mc = &self.mcmc;
        if mc.n_iter == 0 || mc.burn_in >= mc.n_iter {
            return bad(format!("need 0 <= burn_in < n_iter, got {} and {}", mc.burn_in, mc.n_iter));
        }
        if mc.thin == 0 {
            return bad("thin must be >= 1".into());
        }
        self.ram(0).validate()?;
        self.prior.validate()?;
        let f = &self.fixed;
        if !(f.sigma > 0.0 && f.sigma.is_finite() && f.nu > 0.0 && f.nu.is_finite() && f.nugget >= 0.0) {
            return bad("fixed sigma, nu must be positive and nugget >= 0".into());
        }
        if self.energy_draws == 0 {
            return bad("energy_draws must be >= 1".into());
        }
        for t in &self.truths {
            CovarianceModel::try_from(t.clone())?;
        }
        Ok(())
    }

    pub fn ram(&self, seed: u64) -> RamConfig {
        RamConfig {
            n_iter: self.mcmc.n_iter,
            seed,
            target_accept: self.mcmc.target_accept,
            initial_scale: self.mcmc.initial_scale,
            adapt: self.mcmc.adapt,
        }
    }

    pub fn predictive(&self) -> PredictiveConfig {
        PredictiveConfig {
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin,
            max_draws: self.mcmc.max_draws,
            m: self.m,
        }
    }

    /// Simulation truth for `kind`: an entry of `truths`, else the built-in
    /// reference parameters with `ν` from `fixed`.
    pub fn truth(&self, kind: ModelKind) -> Result<CovarianceModel> {
        if let Some(t) = self.truths.iter().find(|t| t.kind == kind) {
            return CovarianceModel::try_from(t.clone());
        }
        CovarianceModel::reference_truth(kind).with_nu(self.fixed.nu)
    }
}

fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// FNV-1a, 64 bit.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for a named unit of work under `root`.
pub fn derive_seed(root: u64, id: &str) -> u64 {
    splitmix64(root ^ fnv1a(id))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub schema_version: u32,
    pub model: ModelParams,
    pub grid: GridSpec,
    pub seed: u64,
}

/// Exact draw of `kind`'s truth on the configured grid.
pub fn simulate_field(cfg: &ExperimentConfig, kind: ModelKind, seed: u64) -> Result<(Dataset, TruthRecord)> {
    let model = cfg.truth(kind)?;
    let locs = latlon_grid(&cfg.grid);
    let values = GpSampler::new(&model, &locs)?.sample(seed);
    let record = TruthRecord {
        schema_version: SCHEMA_VERSION,
        model: model.params(),
        grid: cfg.grid,
        seed,
    };
    Ok((Dataset::new(locs, values, format!("simulated {kind}"))?, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub n_train: usize,
    pub m: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub acceptance_rate: f64,
    /// Post-burn-in means on the constrained scale.
    pub posterior_means: BTreeMap<String, f64>,
}

/// RAM sampling of `kind`'s free parameters from an all-zero start.
pub fn fit(cfg: &ExperimentConfig, kind: ModelKind, train: &Dataset, seed: u64) -> Result<(Chain, FitSummary)> {
    if train.len() < 2 {
        return Err(Error::InvalidInput("fitting needs at least two training points".into()));
    }
    let plan = VecchiaPlan::build(&train.locs, cfg.m)?;
    let post = Posterior {
        kind,
        locs: &train.locs,
        y: &train.values,
        plan: &plan,
        fixed: cfg.fixed,
        prior: cfg.prior,
    };
    let init = ParamVector::zeros(kind);
    let chain = run_mcmc(
        |raw| post.log_density(raw),
        &init.raw,
        ParamVector::raw_names(kind),
        &cfg.ram(seed),
    )?;
    let means = chain.posterior_means(kind, cfg.mcmc.burn_in)?;
    let summary = FitSummary {
        schema_version: SCHEMA_VERSION,
        kind,
        n_train: train.len(),
        m: cfg.m,
        n_iter: chain.len(),
        burn_in: cfg.mcmc.burn_in,
        seed,
        acceptance_rate: chain.acceptance_rate(),
        posterior_means: kind
            .param_names()
            .iter()
            .map(|n| n.to_string())
            .zip(means)
            .collect(),
    };
    Ok((chain, summary))
}

/// Marginal mixtures and joint draws at the test locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub locs: Vec<SphericalPoint>,
    pub mixtures: Vec<PredictiveMixture>,
    /// `samples[k][t]`: joint draw `k` at test location `t`.
    pub samples: Vec<Vec<f64>>,
}

pub fn model_builder(cfg: &ExperimentConfig, kind: ModelKind) -> impl Fn(&[f64]) -> Result<CovarianceModel> + '_ {
    move |raw: &[f64]| cfg.fixed.model(&ParamVector::from_raw(kind, raw.to_vec())?)
}

pub fn predict(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    chain: &Chain,
    train: &Dataset,
    test_locs: &[SphericalPoint],
    seed: u64,
) -> Result<Prediction> {
    if chain.dim() != kind.n_free() {
        return Err(Error::InvalidInput(format!(
            "chain has {} parameters, {kind} model needs {}",
            chain.dim(),
            kind.n_free()
        )));
    }
    let build = model_builder(cfg, kind);
    let mixtures = posterior_predictive(chain, &cfg.predictive(), &build, &train.locs, &train.values, test_locs)?;
    let kept = chain.retained_indices(cfg.mcmc.burn_in, cfg.mcmc.thin, cfg.mcmc.max_draws)?;
    let plan = JointSamplingPlan::build(&train.locs, test_locs, cfg.m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.energy_draws;
    let mut samples = Vec::with_capacity(n);
    let mut cached: Option<(usize, CovarianceModel)> = None;
    for k in 0..n {
        let i = kept[k * kept.len() / n];
        let model = match &cached {
            Some((j, m)) if chain.draws[*j] == chain.draws[i] => m.clone(),
            _ => build(&chain.draws[i])?,
        };
        samples.push(plan.sample(&model, &train.locs, &train.values, test_locs, &mut rng)?);
        cached = Some((i, model));
    }
    Ok(Prediction {
        locs: test_locs.to_vec(),
        mixtures,
        samples,
    })
}

impl Prediction {
    /// `predictive.csv` (per-location summaries), `mixture.csv` (all
    /// components) and `samples.csv` (joint draws, long format).
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join("predictive.csv"))?;
        w.write_record(["index", "lon", "lat", "mean", "variance", "n_components"])?;
        for (t, (s, m)) in self.locs.iter().zip(&self.mixtures).enumerate() {
            w.write_record([
                t.to_string(),
                s.lon.to_string(),
                s.lat.to_string(),
                m.mean().to_string(),
                m.variance().to_string(),
                m.len().to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("mixture.csv"))?;
        w.write_record(["index", "lon", "lat", "component", "mean", "variance", "weight"])?;
        for (t, (s, m)) in self.locs.iter().zip(&self.mixtures).enumerate() {
            for c in 0..m.len() {
                w.write_record([
                    t.to_string(),
                    s.lon.to_string(),
                    s.lat.to_string(),
                    c.to_string(),
                    m.means()[c].to_string(),
                    m.variances()[c].to_string(),
                    m.weights()[c].to_string(),
                ])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
        w.write_record(["sample", "index", "value"])?;
        for (k, draw) in self.samples.iter().enumerate() {
            for (t, v) in draw.iter().enumerate() {
                w.write_record([k.to_string(), t.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Prediction::write_csvs`].
    pub fn read_csvs(dir: &Path) -> Result<Prediction> {
        let path = dir.join("mixture.csv");
        let err = |path: &Path, line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut r = csv::Reader::from_path(&path)?;
        let mut locs = Vec::new();
        let mut comps: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(&path, k + 2, format!("bad field {j}")))
            };
            let t = num(0)? as usize;
            if t == comps.len() {
                locs.push(SphericalPoint::new(num(1)?, num(2)?));
                comps.push(Default::default());
            } else if t + 1 != comps.len() {
                return Err(err(&path, k + 2, "rows must be grouped by index".into()));
            }
            let c = &mut comps[t];
            c.0.push(num(4)?);
            c.1.push(num(5)?);
            c.2.push(num(6)?);
        }
        let mixtures = comps
            .into_iter()
            .map(|(m, v, w)| PredictiveMixture::new(m, v, w))
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join("samples.csv");
        let mut r = csv::Reader::from_path(&path)?;
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let parsed: Option<(usize, usize, f64)> = (|| {
                Some((rec.get(0)?.parse().ok()?, rec.get(1)?.parse().ok()?, rec.get(2)?.parse().ok()?))
            })();
            let (s, t, v) = parsed.ok_or_else(|| err(&path, k + 2, "bad sample row".into()))?;
            if s == samples.len() {
                samples.push(Vec::with_capacity(locs.len()));
            }
            if s + 1 != samples.len() || t != samples[s].len() {
                return Err(err(&path, k + 2, "samples must be grouped and ordered".into()));
            }
            samples[s].push(v);
        }
        Ok(Prediction {
            locs,
            mixtures,
            samples,
        })
    }
}

/// Score record; the field set is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
    pub crps: f64,
    pub energy: f64,
    pub n_test: usize,
    pub seed: u64,
}

/// MAE/RMSE of the mixture means, mean CRPS, and the energy score of the
/// joint draws.
pub fn score(pred: &Prediction, y_test: &[f64], seed: u64) -> Result<Scores> {
    if pred.mixtures.len() != y_test.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} observations",
            pred.mixtures.len(),
            y_test.len()
        )));
    }
    let means: Vec<f64> = pred.mixtures.iter().map(PredictiveMixture::mean).collect();
    let crps: Vec<f64> = pred
        .mixtures
        .iter()
        .zip(y_test)
        .map(|(m, &y)| crps_mixture(m, y))
        .collect::<Result<_>>()?;
    Ok(Scores {
        mae: mae(&means, y_test)?,
        rmse: rmse(&means, y_test)?,
        crps: crps.iter().sum::<f64>() / crps.len() as f64,
        energy: energy_score(&pred.samples, y_test)?,
        n_test: y_test.len(),
        seed,
    })
}

/// One fit-predict-score unit of the experiment grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub true_kind: ModelKind,
    pub assumed_kind: ModelKind,
    pub split: String,
    pub replicate: usize,
}

impl CellId {
    pub fn label(&self) -> String {
        format!(
            "{}__{}__{}__r{}",
            self.true_kind, self.assumed_kind, self.split, self.replicate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub schema_version: u32,
    pub error: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub id: CellId,
    pub outcome: std::result::Result<Scores, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config: ExperimentConfig,
}

fn class_name(c: ErrorClass) -> &'static str {
    match c {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    }
}

struct CellInputs<'a> {
    id: CellId,
    data: &'a Dataset,
    split: &'a Split,
}

fn run_cell(cfg: &ExperimentConfig, cell: &CellInputs<'_>, dir: &Path) -> Result<Scores> {
    let label = cell.id.label();
    let (train, test) = cell.split.apply(cell.data)?;
    if test.is_empty() || train.is_empty() {
        return Err(Error::InvalidInput(format!("{label}: empty train or test set")));
    }
    let fit_seed = derive_seed(cfg.seed, &format!("fit/{label}"));
    let (chain, summary) = fit(cfg, cell.id.assumed_kind, &train, fit_seed)?;
    let pred_seed = derive_seed(cfg.seed, &format!("predict/{label}"));
    let pred = predict(cfg, cell.id.assumed_kind, &chain, &train, &test.locs, pred_seed)?;
    let scores = score(&pred, &test.values, pred_seed)?;
    fs::create_dir_all(dir)?;
    chain.write_csv(&dir.join("chain.csv"))?;
    write_json(&dir.join("fit_summary.json"), &summary)?;
    let mut w = csv::Writer::from_path(dir.join("predictive.csv"))?;
    w.write_record(["lon", "lat", "value", "mean", "variance"])?;
    for ((s, m), y) in test.locs.iter().zip(&pred.mixtures).zip(&test.values) {
        w.write_record([
            s.lon.to_string(),
            s.lat.to_string(),
            y.to_string(),
            m.mean().to_string(),
            m.variance().to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&dir.join("scores.json"), &scores)?;
    Ok(scores)
}

fn worker_count(cfg: &ExperimentConfig, tasks: usize) -> usize {
    let n = if cfg.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.workers
    };
    n.clamp(1, tasks.max(1))
}

/// Runs every (true, assumed, split, replicate) cell and writes the
/// aggregated table. With `resume`, cells whose `scores.json` already
/// exists are read back instead of recomputed. Cell failures are recorded
/// in the cell directory and leave that cell out of the table.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool) -> Result<Vec<CellRecord>> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out.join("fields"))?;
    fs::create_dir_all(out.join("cells"))?;
    write_json(
        &out.join("experiment.json"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
        },
    )?;

    let locs = latlon_grid(&cfg.grid);
    let mut fields: BTreeMap<(ModelKind, usize), Dataset> = BTreeMap::new();
    for &kind in &cfg.true_kinds {
        let model = cfg.truth(kind)?;
        let sampler = GpSampler::new(&model, &locs)?;
        for rep in 0..cfg.replicates {
            let seed = derive_seed(cfg.seed, &format!("data/{kind}/r{rep}"));
            let d = Dataset::new(locs.clone(), sampler.sample(seed), format!("simulated {kind} r{rep}"))?;
            d.write_csv(&out.join("fields").join(format!("{kind}_r{rep}.csv")))?;
            write_json(
                &out.join("fields").join(format!("{kind}_r{rep}.json")),
                &TruthRecord {
                    schema_version: SCHEMA_VERSION,
                    model: model.params(),
                    grid: cfg.grid,
                    seed,
                },
            )?;
            fields.insert((kind, rep), d);
        }
    }
    let mut splits: BTreeMap<(ModelKind, usize, usize), Split> = BTreeMap::new();
    for (&(kind, rep), d) in &fields {
        for (si, scheme) in cfg.splits.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &format!("split/{kind}/r{rep}/{}{si}", scheme.name()));
            splits.insert((kind, rep, si), scheme.apply(d, seed)?);
        }
    }

    let mut cells = Vec::new();
    for &t in &cfg.true_kinds {
        for &a in &cfg.assumed_kinds {
            for (si, scheme) in cfg.splits.iter().enumerate() {
                for rep in 0..cfg.replicates {
                    cells.push((
                        CellId {
                            true_kind: t,
                            assumed_kind: a,
                            split: split_label(cfg, si, scheme),
                            replicate: rep,
                        },
                        si,
                    ));
                }
            }
        }
    }

    let results: Mutex<Vec<Option<CellRecord>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(cfg, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((id, si)) = cells.get(i) else { break };
                let dir = out.join("cells").join(id.label());
                let previous = if resume {
                    fs::read_to_string(dir.join("scores.json"))
                        .ok()
                        .and_then(|t| serde_json::from_str::<Scores>(&t).ok())
                } else {
                    None
                };
                let outcome = match previous {
                    Some(s) => {
                        log::info!("{}: reusing stored scores", id.label());
                        Ok(s)
                    }
                    None => {
                        let _ = fs::remove_file(dir.join("error.json"));
                        let inputs = CellInputs {
                            id: id.clone(),
                            data: &fields[&(id.true_kind, id.replicate)],
                            split: &splits[&(id.true_kind, id.replicate, *si)],
                        };
                        log::info!("{}: running", id.label());
                        run_cell(cfg, &inputs, &dir).map_err(|e| {
                            log::warn!("{}: {e}", id.label());
                            let rec = CellError {
                                schema_version: SCHEMA_VERSION,
                                error: e.to_string(),
                                class: class_name(e.class()).into(),
                            };
                            if fs::create_dir_all(&dir).is_ok() {
                                let _ = write_json(&dir.join("error.json"), &rec);
                            }
                            e.to_string()
                        })
                    }
                };
                results.lock().expect("results lock")[i] = Some(CellRecord {
                    id: id.clone(),
                    outcome,
                });
            });
        }
    });
    let records: Vec<CellRecord> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every cell visited"))
        .collect();
    write_table(cfg, &records, &out.join("table.csv"))?;
    Ok(records)
}

fn split_label(cfg: &ExperimentConfig, index: usize, scheme: &SplitScheme) -> String {
    let same = cfg.splits.iter().filter(|s| s.name() == scheme.name()).count();
    if same > 1 {
        format!("{}{index}", scheme.name())
    } else {
        scheme.name().to_string()
    }
}

/// Replicate-averaged scores, one row per (true, assumed) pair and one
/// column group per split scheme.
pub fn write_table(cfg: &ExperimentConfig, records: &[CellRecord], path: &Path) -> Result<()> {
    let labels: Vec<String> = cfg
        .splits
        .iter()
        .enumerate()
        .map(|(i, s)| split_label(cfg, i, s))
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["true_model".to_string(), "assumed_model".to_string()];
    for l in &labels {
        for s in ["mae", "rmse", "crps", "energy", "n"] {
            header.push(format!("{s}_{l}"));
        }
    }
    w.write_record(&header)?;
    for &t in &cfg.true_kinds {
        for &a in &cfg.assumed_kinds {
            let mut row = vec![t.to_string(), a.to_string()];
            for l in &labels {
                let done: Vec<Scores> = records
                    .iter()
                    .filter(|r| r.id.true_kind == t && r.id.assumed_kind == a && &r.id.split == l)
                    .filter_map(|r| r.outcome.as_ref().ok().copied())
                    .collect();
                let avg = |f: fn(&Scores) -> f64| {
                    if done.is_empty() {
                        String::new()
                    } else {
                        (done.iter().map(f).sum::<f64>() / done.len() as f64).to_string()
                    }
                };
                row.push(avg(|s| s.mae));
                row.push(avg(|s| s.rmse));
                row.push(avg(|s| s.crps));
                row.push(avg(|s| s.energy));
                row.push(done.len().to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Replicate-averaged score for one (true, assumed, split) group.
pub fn mean_score(records: &[CellRecord], t: ModelKind, a: ModelKind, split: &str, f: fn(&Scores) -> f64) -> Option<f64> {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.id.true_kind == t && r.id.assumed_kind == a && r.id.split == split)
        .filter_map(|r| r.outcome.as_ref().ok().map(f))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
