//! Point data on the sphere: CSV ingestion, standardization and train/test
//! splits.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_lon, SphericalPoint};

/// Affine (optionally log-first) transform applied by [`standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub transform: Option<Standardization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub locs: Vec<SphericalPoint>,
    pub values: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(locs: Vec<SphericalPoint>, values: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if locs.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} locations but {} values",
                locs.len(),
                values.len()
            )));
        }
        Ok(Dataset {
            locs,
            values,
            meta: DatasetMeta {
                source: source.into(),
                transform: None,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            locs: idx.iter().map(|&i| self.locs[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Writes `lon,lat,value` in radians.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lon", "lat", "value"])?;
        for (s, v) in self.locs.iter().zip(&self.values) {
            w.write_record([s.lon.to_string(), s.lat.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a `lon,lat,value` CSV. Extra columns are ignored. Angles are
/// radians unless `degrees` is set.
pub fn load_csv(path: &Path, degrees: bool) -> Result<Dataset> {
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column '{name}'")))
    };
    let (ci, cj, ck) = (col("lon")?, col("lat")?, col("value")?);
    let unit = if degrees { PI / 180.0 } else { 1.0 };
    let mut locs = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |c: usize, name: &str| -> Result<f64> {
            let raw = rec.get(c).ok_or_else(|| parse_err(line, format!("missing {name}")))?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("non-numeric {name} '{raw}'"))),
            }
        };
        let lon = field(ci, "lon")? * unit;
        let lat = field(cj, "lat")? * unit;
        let value = field(ck, "value")?;
        if lat.abs() > FRAC_PI_2 {
            return Err(parse_err(line, format!("latitude {lat} rad outside [-pi/2, pi/2]")));
        }
        locs.push(SphericalPoint::new(lon, lat));
        values.push(value);
    }
    Dataset::new(locs, values, path.display().to_string())
}

/// Zero mean and unit sample standard deviation, optionally after a log.
pub fn standardize(d: &Dataset, log_first: bool) -> Result<Dataset> {
    let x: Vec<f64> = if log_first {
        d.values
            .iter()
            .enumerate()
            .map(|(row, &v)| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::Transform {
                        row,
                        detail: format!("log of nonpositive value {v}"),
                    })
                }
            })
            .collect::<Result<_>>()?
    } else {
        d.values.clone()
    };
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateScale);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateScale);
    }
    let values = x.iter().map(|v| (v - mean) / sd).collect();
    Ok(Dataset {
        locs: d.locs.clone(),
        values,
        meta: DatasetMeta {
            source: d.meta.source.clone(),
            transform: Some(Standardization {
                shift: mean,
                scale: sd,
                log: log_first,
            }),
        },
    })
}

impl Standardization {
    pub fn invert(&self, v: f64) -> f64 {
        let x = v * self.scale + self.shift;
        if self.log {
            x.exp()
        } else {
            x
        }
    }
}

/// Inverse of [`standardize`]; a dataset without a transform is returned as is.
pub fn unstandardize(d: &Dataset) -> Dataset {
    match d.meta.transform {
        None => d.clone(),
        Some(t) => Dataset {
            locs: d.locs.clone(),
            values: d.values.iter().map(|&v| t.invert(v)).collect(),
            meta: DatasetMeta {
                source: d.meta.source.clone(),
                transform: None,
            },
        },
    }
}

/// Membership of each row in the test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub is_test: Vec<bool>,
}

impl Split {
    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.is_test.len()).filter(|&i| self.is_test[i]).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.is_test.len()).filter(|&i| !self.is_test[i]).collect()
    }

    pub fn n_test(&self) -> usize {
        self.is_test.iter().filter(|&&t| t).count()
    }

    pub fn test_fraction(&self) -> f64 {
        self.n_test() as f64 / self.is_test.len().max(1) as f64
    }

    /// `(train, test)` in original row order.
    pub fn apply(&self, d: &Dataset) -> Result<(Dataset, Dataset)> {
        if d.len() != self.is_test.len() {
            return Err(Error::InvalidInput(format!(
                "split covers {} rows, dataset has {}",
                self.is_test.len(),
                d.len()
            )));
        }
        Ok((d.subset(&self.train_indices()), d.subset(&self.test_indices())))
    }

    /// `lon,lat,value,split` with `split` in {train, test}.
    pub fn write_csv(&self, d: &Dataset, path: &Path) -> Result<()> {
        if d.len() != self.is_test.len() {
            return Err(Error::InvalidInput("split and dataset lengths differ".into()));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lon", "lat", "value", "split"])?;
        for i in 0..d.len() {
            let s = d.locs[i];
            let tag = if self.is_test[i] { "test" } else { "train" };
            w.write_record([s.lon.to_string(), s.lat.to_string(), d.values[i].to_string(), tag.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `split` column written by [`Split::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Split> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let col = r.headers()?.iter().position(|h| h == "split").ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            detail: "missing column 'split'".into(),
        })?;
        let mut is_test = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            is_test.push(match rec.get(col) {
                Some("test") => true,
                Some("train") => false,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: k + 2,
                        detail: format!("split must be train or test, got {other:?}"),
                    })
                }
            });
        }
        Ok(Split { is_test })
    }
}

/// Uniformly random test set of `round(frac·n)` rows.
pub fn random_split(d: &Dataset, frac: f64, seed: u64) -> Result<Split> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidInput(format!("test fraction must lie in (0, 1), got {frac}")));
    }
    let n = d.len();
    let n_test = (frac * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = idx.partial_shuffle(&mut rng, n_test);
    let mut is_test = vec![false; n];
    for &i in chosen.iter() {
        is_test[i] = true;
    }
    Ok(Split { is_test })
}

/// Settings for [`region_split`]. Widths are half-extents in radians: a
/// region centred at `c` covers `|lon − c_lon| ≤ lon_width` (periodic) and
/// `|lat − c_lat| ≤ lat_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSpec {
    pub n_regions: usize,
    pub lon_width: f64,
    pub lat_width: f64,
    pub target_frac: f64,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec {
            n_regions: 10,
            lon_width: 0.4,
            lat_width: 0.2,
            target_frac: 0.2,
        }
    }
}

/// Attempts allowed for placing one region before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Test set made of randomly placed, non-overlapping lon/lat rectangles.
///
/// Centres are drawn uniformly in `[−π, π) × [−π/2, π/2]` and kept only if
/// they do not overlap an earlier region. Placement stops after
/// `n_regions` regions or once the test fraction is within the last
/// region's share of `target_frac`.
pub fn region_split(d: &Dataset, spec: &RegionSpec, seed: u64) -> Result<Split> {
    if !(spec.target_frac > 0.0 && spec.target_frac < 1.0) {
        return Err(Error::InvalidInput(format!(
            "target fraction must lie in (0, 1), got {}",
            spec.target_frac
        )));
    }
    if !(spec.lon_width > 0.0 && spec.lat_width > 0.0) || spec.n_regions == 0 {
        return Err(Error::InvalidInput("region widths and count must be positive".into()));
    }
    let n = d.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut is_test = vec![false; n];
    let mut n_test = 0usize;
    while centers.len() < spec.n_regions {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let c = (rng.random_range(-PI..PI), rng.random_range(-FRAC_PI_2..=FRAC_PI_2));
            let clash = centers.iter().any(|&(lon, lat)| {
                wrap_lon(c.0 - lon).abs() < 2.0 * spec.lon_width && (c.1 - lat).abs() < 2.0 * spec.lat_width
            });
            if !clash {
                placed = Some(c);
                break;
            }
        }
        let Some(c) = placed else {
            if centers.is_empty() {
                return Err(Error::Placement {
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                });
            }
            log::warn!("placed only {} of {} regions", centers.len(), spec.n_regions);
            break;
        };
        centers.push(c);
        let before = n_test;
        for (i, s) in d.locs.iter().enumerate() {
            if !is_test[i] && wrap_lon(s.lon - c.0).abs() <= spec.lon_width && (s.lat - c.1).abs() <= spec.lat_width {
                is_test[i] = true;
                n_test += 1;
            }
        }
        let frac = n_test as f64 / n.max(1) as f64;
        let share = (n_test - before) as f64 / n.max(1) as f64;
        if frac >= spec.target_frac - share {
            break;
        }
    }
    Ok(Split { is_test })
}
