//! `spherecov`: simulate fields, fit covariance models, predict, score and
//! run the full true-by-assumed experiment grid.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use spherecov::data::load_csv;
use spherecov::inference::Chain;
use spherecov::pipeline::{derive_seed, fit, predict, run_experiment, score, simulate_field, write_json, Prediction};
use spherecov::{Dataset, Error, ErrorClass, ExperimentConfig, ModelKind, Preset, Result, Split};

#[derive(Parser)]
#[command(name = "spherecov", version, about = "Gaussian processes on the sphere")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config layered over the preset; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Root seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Input CSV angles are in degrees
    #[arg(long, global = true)]
    degrees: bool,
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV with lon,lat,value columns
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// CSV with a split column (train/test); defaults to the data file
    /// when it has one
    #[arg(long, value_name = "PATH")]
    split: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a field on the configured grid: field.csv, truth.json, split.csv
    Simulate {
        /// Truth model; defaults to the first configured true kind
        #[arg(long)]
        kind: Option<ModelKind>,
    },
    /// Sample the posterior on the training rows: chain.csv, fit_summary.json
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Assumed model; defaults to the first configured assumed kind
        #[arg(long)]
        kind: Option<ModelKind>,
    },
    /// Predict the test rows: predictive.csv, mixture.csv, samples.csv
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "PATH")]
        chain: PathBuf,
        /// Assumed model; inferred from the chain columns when omitted
        #[arg(long)]
        kind: Option<ModelKind>,
    },
    /// Score stored predictions against the test rows: scores.json
    Score {
        #[command(flatten)]
        data: DataArgs,
        /// Directory holding mixture.csv and samples.csv; defaults to --out
        #[arg(long, value_name = "DIR")]
        predictions: Option<PathBuf>,
    },
    /// Run every true/assumed/split/replicate cell: table.csv plus per-cell outputs
    Experiment {
        /// Reuse cells that already have scores.json
        #[arg(long)]
        resume: bool,
    },
}

fn config(common: &Common, extra: Map<String, Value>) -> Result<ExperimentConfig> {
    let mut over = extra;
    if let Some(s) = common.seed {
        over.insert("seed".into(), json!(s));
    }
    if let Some(o) = &common.out {
        over.insert("out_dir".into(), json!(o));
    }
    let preset = common.preset.into();
    match &common.config {
        Some(p) => ExperimentConfig::from_file(preset, p, Value::Object(over)),
        None => ExperimentConfig::layered(preset, None, Value::Object(over)),
    }
}

fn kind_override(key: &str, kind: Option<ModelKind>) -> Map<String, Value> {
    let mut m = Map::new();
    if let Some(k) = kind {
        m.insert(key.into(), json!([k]));
    }
    m
}

fn has_column(path: &Path, name: &str) -> Result<bool> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    Ok(r.headers()?.iter().any(|h| h == name))
}

fn load(args: &DataArgs, degrees: bool) -> Result<(Dataset, Option<Split>)> {
    let d = load_csv(&args.data, degrees)?;
    let path = match &args.split {
        Some(p) => Some(p.as_path()),
        None if has_column(&args.data, "split")? => Some(args.data.as_path()),
        None => None,
    };
    let split = path.map(Split::read_csv).transpose()?;
    Ok((d, split))
}

fn train_test(args: &DataArgs, degrees: bool) -> Result<(Dataset, Dataset)> {
    match load(args, degrees)? {
        (d, Some(s)) => s.apply(&d),
        (_, None) => Err(Error::Config(format!(
            "{} has no split column and no --split file was given",
            args.data.display()
        ))),
    }
}

fn infer_kind(chain: &Chain) -> Result<ModelKind> {
    [
        ModelKind::Isotropic,
        ModelKind::AxiallySymmetric,
        ModelKind::GeneralNonstationary,
    ]
    .into_iter()
    .find(|k| spherecov::inference::ParamVector::raw_names(*k) == chain.names)
    .ok_or_else(|| Error::InvalidInput(format!("chain columns {:?} match no model kind", chain.names)))
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Simulate { kind } => {
            let cfg = config(common, kind_override("true_kinds", kind))?;
            let kind = cfg.true_kinds[0];
            fs::create_dir_all(&cfg.out_dir)?;
            // same streams as replicate 0 of an experiment with this config
            let seed = derive_seed(cfg.seed, &format!("data/{kind}/r0"));
            let (field, truth) = simulate_field(&cfg, kind, seed)?;
            let scheme = cfg.splits[0];
            let split_seed = derive_seed(cfg.seed, &format!("split/{kind}/r0/{}0", scheme.name()));
            let split = scheme.apply(&field, split_seed)?;
            field.write_csv(&cfg.out_dir.join("field.csv"))?;
            write_json(&cfg.out_dir.join("truth.json"), &truth)?;
            split.write_csv(&field, &cfg.out_dir.join("split.csv"))?;
            log::info!(
                "{kind} field with {} points, {} test rows ({} split), written to {}",
                field.len(),
                split.n_test(),
                scheme.name(),
                cfg.out_dir.display()
            );
        }
        Command::Fit { data, kind } => {
            let cfg = config(common, kind_override("assumed_kinds", kind))?;
            let kind = cfg.assumed_kinds[0];
            let train = match load(&data, common.degrees)? {
                (d, Some(s)) => s.apply(&d)?.0,
                (d, None) => d,
            };
            fs::create_dir_all(&cfg.out_dir)?;
            let (chain, summary) = fit(&cfg, kind, &train, derive_seed(cfg.seed, "fit"))?;
            chain.write_csv(&cfg.out_dir.join("chain.csv"))?;
            write_json(&cfg.out_dir.join("fit_summary.json"), &summary)?;
            log::info!(
                "{kind}: {} iterations, acceptance {:.3}",
                chain.len(),
                summary.acceptance_rate
            );
        }
        Command::Predict { data, chain, kind } => {
            let chain = Chain::read_csv(&chain)?;
            let kind = match kind {
                Some(k) => k,
                None => infer_kind(&chain)?,
            };
            let cfg = config(common, kind_override("assumed_kinds", Some(kind)))?;
            let (train, test) = train_test(&data, common.degrees)?;
            fs::create_dir_all(&cfg.out_dir)?;
            let pred = predict(&cfg, kind, &chain, &train, &test.locs, derive_seed(cfg.seed, "predict"))?;
            pred.write_csvs(&cfg.out_dir)?;
            log::info!("{} test locations predicted with {kind}", test.len());
        }
        Command::Score { data, predictions } => {
            let cfg = config(common, Map::new())?;
            let (_, test) = train_test(&data, common.degrees)?;
            let dir = predictions.unwrap_or_else(|| cfg.out_dir.clone());
            let pred = Prediction::read_csvs(&dir)?;
            let scores = score(&pred, &test.values, cfg.seed)?;
            fs::create_dir_all(&cfg.out_dir)?;
            write_json(&cfg.out_dir.join("scores.json"), &scores)?;
            println!("{}", serde_json::to_string(&scores)?);
        }
        Command::Experiment { resume } => {
            let cfg = config(common, Map::new())?;
            let records = run_experiment(&cfg, resume)?;
            let failed = records.iter().filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                log::warn!("{failed} of {} cells failed; see error.json in their directories", records.len());
            }
            println!("{}", cfg.out_dir.join("table.csv").display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
