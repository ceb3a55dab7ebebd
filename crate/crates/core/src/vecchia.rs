//! Vecchia approximation: maxmin ordering, nearest-neighbour conditioning,
//! the approximate log-likelihood, and kriging built on the same
//! conditionals.
//!
//! All ordering and neighbour searches use chordal (ℝ³) distance and are
//! exact brute force.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{covariance_matrix, find_duplicate, pair_covariance, CovarianceModel, PreparedSite};
use crate::error::{Error, Result};
use crate::geometry::{to_euclidean, EuclideanPoint, SphericalPoint};
use crate::linalg::{cholesky_in_place, forward_solve, gaussian_logpdf_dense, pairwise_sum};

/// Largest problem accepted by the dense paths.
pub const DENSE_LIMIT: usize = 5000;

/// Ordering plus conditioning sets.
///
/// `cond_sets[i]` holds *positions* in `order` (not original indices), all
/// strictly smaller than `i`, sorted nearest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VecchiaPlan {
    pub order: Vec<usize>,
    pub cond_sets: Vec<Vec<usize>>,
    pub m: usize,
}

impl VecchiaPlan {
    /// Maxmin ordering followed by `m`-nearest-neighbour conditioning.
    pub fn build(locs: &[SphericalPoint], m: usize) -> Result<Self> {
        let order = maxmin_order(locs)?;
        let ordered: Vec<SphericalPoint> = order.iter().map(|&i| locs[i]).collect();
        let cond_sets = nearest_neighbor_sets(&ordered, m);
        Ok(VecchiaPlan { order, cond_sets, m })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.order.len();
        let mut seen = vec![false; n];
        for &i in &self.order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput("plan order is not a permutation".into()));
            }
        }
        if self.cond_sets.len() != n {
            return Err(Error::InvalidInput("plan has wrong number of conditioning sets".into()));
        }
        for (i, g) in self.cond_sets.iter().enumerate() {
            if g.len() != self.m.min(i) || g.iter().any(|&j| j >= i) {
                return Err(Error::InvalidInput(format!("conditioning set {i} is malformed")));
            }
            let mut sorted = g.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != g.len() {
                return Err(Error::InvalidInput(format!("conditioning set {i} has repeats")));
            }
        }
        Ok(())
    }
}

#[inline]
fn dist2(a: EuclideanPoint, b: EuclideanPoint) -> f64 {
    let d = a - b;
    d.dot(d)
}

/// Relative tolerance under which two squared distances count as tied.
const TIE_TOL: f64 = 1e-12;

#[inline]
fn beats(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + TIE_TOL * incumbent.abs().max(f64::MIN_POSITIVE)
}

/// Maximum-minimum-distance ordering.
///
/// Starts at the location nearest the normalized Euclidean centroid; every
/// later pick maximizes its minimum distance to those already placed. Ties
/// (within a relative 1e-12) go to the smallest original index.
pub fn maxmin_order(locs: &[SphericalPoint]) -> Result<Vec<usize>> {
    let n = locs.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot order an empty location set".into()));
    }
    if let Some((first, second)) = find_duplicate(locs) {
        return Err(Error::DuplicateLocation { first, second });
    }
    let pts: Vec<EuclideanPoint> = locs.iter().map(|&s| to_euclidean(s)).collect();
    let centroid = pts.iter().fold(EuclideanPoint::default(), |acc, &p| acc + p);
    // nearest to the normalized centroid == largest projection onto it
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let proj = p.dot(centroid);
        if i == 0 || beats(proj, best) {
            best = proj;
            first = i;
        }
    }

    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        order.push(current);
        placed[current] = true;
        if order.len() == n {
            break;
        }
        let anchor = pts[current];
        let mut next = usize::MAX;
        let mut next_d2 = f64::NEG_INFINITY;
        for i in 0..n {
            if placed[i] {
                continue;
            }
            let d2 = dist2(pts[i], anchor);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if next == usize::MAX || beats(min_d2[i], next_d2) {
                next_d2 = min_d2[i];
                next = i;
            }
        }
        current = next;
    }
    Ok(order)
}

/// Keeps the `k` smallest `(d2, id)` pairs, sorted ascending.
struct NearestK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl NearestK {
    fn new(k: usize) -> Self {
        NearestK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn clear(&mut self) {
        self.items.clear();
    }

    #[inline]
    fn offer(&mut self, d2: f64, id: usize) {
        if self.k == 0 {
            return;
        }
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if (d2, id) >= worst {
                return;
            }
        }
        let pos = self.items.partition_point(|&e| e < (d2, id));
        self.items.insert(pos, (d2, id));
        self.items.truncate(self.k);
    }

    fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|&(_, id)| id).collect()
    }
}

/// For locations already in maxmin order, the `min(m, i)` nearest earlier
/// positions of each position `i`, nearest first, ties by smaller position.
pub fn nearest_neighbor_sets(ordered: &[SphericalPoint], m: usize) -> Vec<Vec<usize>> {
    let pts: Vec<EuclideanPoint> = ordered.iter().map(|&s| to_euclidean(s)).collect();
    let mut best = NearestK::new(m);
    (0..pts.len())
        .map(|i| {
            best.clear();
            for j in 0..i {
                best.offer(dist2(pts[i], pts[j]), j);
            }
            best.ids()
        })
        .collect()
}

/// Scratch buffers for one conditional.
#[derive(Default)]
struct Workspace {
    k: Vec<f64>,
    c: Vec<f64>,
    y: Vec<f64>,
}

/// Mean and variance of a target given conditioning sites and their values.
///
/// The target variance includes `nugget`, as do the conditioning
/// covariances on their diagonal.
fn conditional_moments(
    target: &PreparedSite,
    cond: &[&PreparedSite],
    values: &[f64],
    nugget: f64,
    ws: &mut Workspace,
) -> std::result::Result<(f64, f64, f64), &'static str> {
    let k = cond.len();
    let prior_var = pair_covariance(target, target) + nugget;
    if k == 0 {
        return Ok((0.0, prior_var, prior_var));
    }
    ws.k.clear();
    ws.k.resize(k * k, 0.0);
    ws.c.clear();
    ws.y.clear();
    for (a, sa) in cond.iter().enumerate() {
        for (b, sb) in cond.iter().enumerate().take(a) {
            ws.k[a * k + b] = pair_covariance(sa, sb);
        }
        ws.k[a * k + a] = pair_covariance(sa, sa) + nugget;
        ws.c.push(pair_covariance(sa, target));
        ws.y.push(values[a]);
    }
    if !cholesky_in_place(&mut ws.k, k) {
        return Err("conditioning covariance is not positive definite");
    }
    forward_solve(&ws.k, k, &mut ws.c);
    forward_solve(&ws.k, k, &mut ws.y);
    let mean: f64 = ws.c.iter().zip(&ws.y).map(|(a, b)| a * b).sum();
    let explained: f64 = ws.c.iter().map(|a| a * a).sum();
    Ok((mean, prior_var - explained, prior_var))
}

/// Predictive variances may round to zero (or a hair below) when a target
/// coincides with a noise-free conditioning site; floor those, reject real
/// negatives.
fn floor_variance(var: f64, prior_var: f64, index: usize) -> Result<f64> {
    if !(var >= -1e-8 * prior_var) {
        return Err(Error::NumericalSingularity {
            index,
            detail: format!("predictive variance {var}"),
        });
    }
    Ok(var.max(1e-12 * prior_var))
}

fn log_normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * ((2.0 * PI * var).ln() + r * r / var)
}

fn check_lengths(locs: &[SphericalPoint], y: &[f64]) -> Result<()> {
    if locs.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} locations but {} observations",
            locs.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Vecchia log-likelihood `Σᵢ log N(yᵢ | y_g(i))`.
pub fn vecchia_loglik(model: &CovarianceModel, locs: &[SphericalPoint], y: &[f64], plan: &VecchiaPlan) -> Result<f64> {
    check_lengths(locs, y)?;
    if plan.len() != locs.len() {
        return Err(Error::InvalidInput("plan was built for a different location set".into()));
    }
    let sites = model.prepare_all(locs)?;
    vecchia_loglik_prepared(&sites, model.nugget(), y, plan)
}

pub(crate) fn vecchia_loglik_prepared(sites: &[PreparedSite], nugget: f64, y: &[f64], plan: &VecchiaPlan) -> Result<f64> {
    let mut ws = Workspace::default();
    let mut cond: Vec<&PreparedSite> = Vec::with_capacity(plan.m);
    let mut values: Vec<f64> = Vec::with_capacity(plan.m);
    let mut terms = Vec::with_capacity(plan.len());
    for (pos, &idx) in plan.order.iter().enumerate() {
        cond.clear();
        values.clear();
        for &p in &plan.cond_sets[pos] {
            let j = plan.order[p];
            cond.push(&sites[j]);
            values.push(y[j]);
        }
        let (mean, var, _) = conditional_moments(&sites[idx], &cond, &values, nugget, &mut ws)
            .map_err(|detail| Error::NumericalSingularity {
                index: idx,
                detail: detail.into(),
            })?;
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::NumericalSingularity {
                index: idx,
                detail: format!("conditional variance {var}"),
            });
        }
        terms.push(log_normal_pdf(y[idx], mean, var));
    }
    Ok(pairwise_sum(&terms))
}

/// Exact Gaussian log-likelihood via a dense Cholesky factorization.
pub fn exact_loglik(model: &CovarianceModel, locs: &[SphericalPoint], y: &[f64]) -> Result<f64> {
    check_lengths(locs, y)?;
    if locs.len() > DENSE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "dense likelihood limited to {DENSE_LIMIT} locations, got {}",
            locs.len()
        )));
    }
    gaussian_logpdf_dense(covariance_matrix(locs, model)?, y)
}

/// Marginal Gaussian predictive at one location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPredictive {
    pub mean: f64,
    pub variance: f64,
}

/// Each test location's `m` nearest training locations. Depends only on
/// geometry, so it is shared across posterior draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionPlan {
    pub neighbors: Vec<Vec<usize>>,
}

impl PredictionPlan {
    pub fn build(train_locs: &[SphericalPoint], test_locs: &[SphericalPoint], m: usize) -> Result<Self> {
        if train_locs.is_empty() {
            return Err(Error::InvalidInput("prediction needs training data".into()));
        }
        if m == 0 {
            return Err(Error::InvalidInput("prediction needs m >= 1".into()));
        }
        let train: Vec<EuclideanPoint> = train_locs.iter().map(|&s| to_euclidean(s)).collect();
        let mut best = NearestK::new(m);
        let neighbors = test_locs
            .iter()
            .map(|&s| {
                let p = to_euclidean(s);
                best.clear();
                for (j, &t) in train.iter().enumerate() {
                    best.offer(dist2(p, t), j);
                }
                best.ids()
            })
            .collect();
        Ok(PredictionPlan { neighbors })
    }

    /// Conditional predictive at every test location under `model`.
    pub fn predict(
        &self,
        model: &CovarianceModel,
        train_locs: &[SphericalPoint],
        y_train: &[f64],
        test_locs: &[SphericalPoint],
    ) -> Result<Vec<GaussianPredictive>> {
        check_lengths(train_locs, y_train)?;
        if test_locs.len() != self.neighbors.len() {
            return Err(Error::InvalidInput("prediction plan built for other test locations".into()));
        }
        let train_sites = model.prepare_all(train_locs)?;
        let mut ws = Workspace::default();
        let mut cond = Vec::new();
        let mut values = Vec::new();
        test_locs
            .iter()
            .zip(&self.neighbors)
            .enumerate()
            .map(|(t, (&s, nb))| {
                let target = model.prepare(s)?;
                cond.clear();
                values.clear();
                for &j in nb {
                    cond.push(&train_sites[j]);
                    values.push(y_train[j]);
                }
                let (mean, var, prior) = conditional_moments(&target, &cond, &values, model.nugget(), &mut ws)
                    .map_err(|detail| Error::NumericalSingularity {
                        index: t,
                        detail: detail.into(),
                    })?;
                let variance = floor_variance(var, prior, t)?;
                Ok(GaussianPredictive { mean, variance })
            })
            .collect()
    }
}

/// Kriging from the `m` nearest training observations of each test location.
pub fn vecchia_predict(
    model: &CovarianceModel,
    train_locs: &[SphericalPoint],
    y_train: &[f64],
    test_locs: &[SphericalPoint],
    m: usize,
) -> Result<Vec<GaussianPredictive>> {
    PredictionPlan::build(train_locs, test_locs, m)?.predict(model, train_locs, y_train, test_locs)
}

/// A conditioning source for sequential joint sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Train(usize),
    /// Index into the original test list, already sampled.
    Test(usize),
}

/// Sampling order over the test locations (maxmin) and, per step, the `m`
/// nearest among training locations and previously sampled test locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSamplingPlan {
    pub order: Vec<usize>,
    pub neighbors: Vec<Vec<Source>>,
}

impl JointSamplingPlan {
    pub fn build(train_locs: &[SphericalPoint], test_locs: &[SphericalPoint], m: usize) -> Result<Self> {
        if train_locs.is_empty() {
            return Err(Error::InvalidInput("prediction needs training data".into()));
        }
        if m == 0 {
            return Err(Error::InvalidInput("prediction needs m >= 1".into()));
        }
        if test_locs.is_empty() {
            return Ok(JointSamplingPlan {
                order: vec![],
                neighbors: vec![],
            });
        }
        let order = maxmin_order(test_locs)?;
        let train: Vec<EuclideanPoint> = train_locs.iter().map(|&s| to_euclidean(s)).collect();
        let test: Vec<EuclideanPoint> = test_locs.iter().map(|&s| to_euclidean(s)).collect();
        let n_train = train.len();
        let mut best = NearestK::new(m);
        let neighbors = order
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                best.clear();
                for (j, &p) in train.iter().enumerate() {
                    best.offer(dist2(test[t], p), j);
                }
                for (k, &prev) in order[..pos].iter().enumerate() {
                    best.offer(dist2(test[t], test[prev]), n_train + k);
                }
                best.ids()
                    .into_iter()
                    .map(|id| if id < n_train { Source::Train(id) } else { Source::Test(order[id - n_train]) })
                    .collect()
            })
            .collect();
        Ok(JointSamplingPlan { order, neighbors })
    }

    /// One draw from the approximate joint predictive, in test-list order.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        model: &CovarianceModel,
        train_locs: &[SphericalPoint],
        y_train: &[f64],
        test_locs: &[SphericalPoint],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_lengths(train_locs, y_train)?;
        if test_locs.len() != self.order.len() {
            return Err(Error::InvalidInput("sampling plan built for other test locations".into()));
        }
        let train_sites = model.prepare_all(train_locs)?;
        let test_sites = model.prepare_all(test_locs)?;
        let mut draws = vec![f64::NAN; test_locs.len()];
        let mut ws = Workspace::default();
        let mut cond = Vec::new();
        let mut values = Vec::new();
        for (&t, nb) in self.order.iter().zip(&self.neighbors) {
            cond.clear();
            values.clear();
            for src in nb {
                match *src {
                    Source::Train(j) => {
                        cond.push(&train_sites[j]);
                        values.push(y_train[j]);
                    }
                    Source::Test(j) => {
                        cond.push(&test_sites[j]);
                        values.push(draws[j]);
                    }
                }
            }
            let (mean, var, prior) = conditional_moments(&test_sites[t], &cond, &values, model.nugget(), &mut ws)
                .map_err(|detail| Error::NumericalSingularity {
                    index: t,
                    detail: detail.into(),
                })?;
            let var = floor_variance(var, prior, t)?;
            let z: f64 = rng.sample(StandardNormal);
            draws[t] = mean + var.sqrt() * z;
        }
        Ok(draws)
    }
}

/// Seeded single draw from the approximate joint predictive.
pub fn joint_predictive_sample(
    model: &CovarianceModel,
    train_locs: &[SphericalPoint],
    y_train: &[f64],
    test_locs: &[SphericalPoint],
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let plan = JointSamplingPlan::build(train_locs, test_locs, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.sample(model, train_locs, y_train, test_locs, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{covariance, ModelKind};
    use crate::geometry::chordal_distance;
    use nalgebra::{DMatrix, DVector};
    use std::f64::consts::FRAC_PI_2;

    fn random_points(n: usize, seed: u64) -> Vec<SphericalPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-0.95..0.95);
                SphericalPoint::new(rng.random_range(-PI..PI), z.asin())
            })
            .collect()
    }

    fn small_cap(n: usize, seed: u64) -> Vec<SphericalPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| SphericalPoint::new(rng.random_range(-0.6..0.6), rng.random_range(-0.4..0.4)))
            .collect()
    }

    fn gp_draw(model: &CovarianceModel, locs: &[SphericalPoint], seed: u64) -> Vec<f64> {
        let c = crate::covariance::covariance_matrix(locs, model).unwrap();
        let l = c.cholesky().unwrap().l();
        (l * DVector::from_vec(normals(locs.len(), seed))).as_slice().to_vec()
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Brute-force check: each pick maximizes the min distance to the prefix
    /// and loses ties only to larger indices.
    fn assert_maxmin(locs: &[SphericalPoint], order: &[usize]) {
        for pos in 1..order.len() {
            let score = |i: usize| {
                order[..pos]
                    .iter()
                    .map(|&j| chordal_distance(locs[i], locs[j]))
                    .fold(f64::INFINITY, f64::min)
            };
            let chosen = score(order[pos]);
            for &cand in &order[pos..] {
                let s = score(cand);
                assert!(s <= chosen + 1e-12, "position {pos}: candidate {cand} beats pick");
                if (s - chosen).abs() < 1e-15 {
                    assert!(cand >= order[pos]);
                }
            }
        }
    }

    #[test]
    fn maxmin_examples() {
        assert_eq!(maxmin_order(&[SphericalPoint::new(0.3, 0.1)]).unwrap(), vec![0]);
        let a = SphericalPoint::new(0.0, 0.0);
        let b = SphericalPoint::new(PI, 0.0);
        let c = SphericalPoint::new(FRAC_PI_2, 0.0);
        assert_eq!(maxmin_order(&[a, b, c]).unwrap(), vec![2, 0, 1]);
        for seed in 0..30 {
            let n = 2 + (seed as usize % 7);
            let locs = random_points(n, seed);
            let order = maxmin_order(&locs).unwrap();
            assert_maxmin(&locs, &order);
        }
    }

    #[test]
    fn maxmin_rejects_duplicates() {
        let p = SphericalPoint::new(0.3, 0.1);
        assert!(matches!(
            maxmin_order(&[p, SphericalPoint::new(1.0, 0.0), p]),
            Err(Error::DuplicateLocation { .. })
        ));
    }

    #[test]
    fn neighbor_examples() {
        let locs = random_points(10, 3);
        let sets = nearest_neighbor_sets(&locs, 3);
        assert!(sets[0].is_empty());
        for (i, g) in sets.iter().enumerate() {
            let mut brute: Vec<(f64, usize)> = (0..i).map(|j| (chordal_distance(locs[i], locs[j]), j)).collect();
            brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = brute.iter().take(3).map(|&(_, j)| j).collect();
            assert_eq!(g, &want);
        }
        let full = nearest_neighbor_sets(&locs, 9);
        for (i, g) in full.iter().enumerate() {
            let mut g = g.clone();
            g.sort_unstable();
            assert_eq!(g, (0..i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn plans_are_valid_and_deterministic() {
        let locs = random_points(80, 4);
        let p1 = VecchiaPlan::build(&locs, 7).unwrap();
        p1.validate().unwrap();
        assert_eq!(p1, VecchiaPlan::build(&locs, 7).unwrap());
        let json = serde_json::to_string(&p1).unwrap();
        assert_eq!(serde_json::from_str::<VecchiaPlan>(&json).unwrap(), p1);
    }

    #[test]
    fn loglik_full_conditioning_is_exact() {
        let locs = random_points(40, 5);
        let y = normals(40, 6);
        for kind in ModelKind::ALL {
            let model = CovarianceModel::reference_truth(kind).with_nugget(1e-8).unwrap();
            let plan = VecchiaPlan::build(&locs, 39).unwrap();
            let v = vecchia_loglik(&model, &locs, &y, &plan).unwrap();
            let e = exact_loglik(&model, &locs, &y).unwrap();
            assert!((v - e).abs() < 1e-8 * e.abs().max(1.0), "{kind}: {v} vs {e}");
        }
    }

    #[test]
    fn loglik_empty_sets_is_independence() {
        let locs = random_points(20, 7);
        let y = normals(20, 8);
        let model = CovarianceModel::reference_truth(ModelKind::AxiallySymmetric)
            .with_nugget(0.3)
            .unwrap();
        let plan = VecchiaPlan::build(&locs, 0).unwrap();
        let v = vecchia_loglik(&model, &locs, &y, &plan).unwrap();
        let want: f64 = y.iter().map(|&yi| log_normal_pdf(yi, 0.0, 1.3)).sum();
        assert!((v - want).abs() < 1e-10);
    }

    #[test]
    fn loglik_close_to_exact_on_coarse_grid() {
        // 10 × 5 global grid
        let locs: Vec<_> = (0..50)
            .map(|k| SphericalPoint::new(-PI + 0.2 * PI * (k % 10) as f64, -0.4 * PI + 0.2 * PI * (k / 10) as f64))
            .collect();
        let model = CovarianceModel::reference_truth(ModelKind::GeneralNonstationary);
        let y = gp_draw(&model, &locs, 9);
        let plan = VecchiaPlan::build(&locs, 10).unwrap();
        let v = vecchia_loglik(&model, &locs, &y, &plan).unwrap();
        let e = exact_loglik(&model, &locs, &y).unwrap();
        assert!(((v - e) / e).abs() < 1e-2, "{v} vs {e}");
    }

    #[test]
    fn exact_examples() {
        let model = CovarianceModel::isotropic(-0.5, 1.0, 0.5).unwrap();
        let one = exact_loglik(&model, &[SphericalPoint::new(0.0, 0.0)], &[0.0]).unwrap();
        assert!((one + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((one + 0.918_939).abs() < 1e-6);

        let (a, b) = (SphericalPoint::new(0.0, 0.0), SphericalPoint::new(0.3, 0.2));
        let rho = covariance(a, b, &model).unwrap();
        let (y1, y2) = (0.4, -1.1);
        let det = 1.0 - rho * rho;
        let want = -(2.0 * PI).ln() - 0.5 * det.ln() - (y1 * y1 - 2.0 * rho * y1 * y2 + y2 * y2) / (2.0 * det);
        let got = exact_loglik(&model, &[a, b], &[y1, y2]).unwrap();
        assert!((got - want).abs() < 1e-12);

        let locs = random_points(30, 10);
        let y = normals(30, 11);
        let base = exact_loglik(&model, &locs, &y).unwrap();
        let perm: Vec<usize> = (0..30).rev().collect();
        let pl: Vec<_> = perm.iter().map(|&i| locs[i]).collect();
        let py: Vec<_> = perm.iter().map(|&i| y[i]).collect();
        assert!((exact_loglik(&model, &pl, &py).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn vecchia_error_shrinks_with_m() {
        let mut monotone = 0;
        for inst in 0..20u64 {
            let locs = small_cap(60, 100 + inst);
            let model = CovarianceModel::reference_truth(ModelKind::GeneralNonstationary)
                .with_nugget(1e-8)
                .unwrap();
            let y = gp_draw(&model, &locs, 200 + inst);
            let exact = exact_loglik(&model, &locs, &y).unwrap();
            let errs: Vec<f64> = [1, 5, 10, 59]
                .iter()
                .map(|&m| {
                    let plan = VecchiaPlan::build(&locs, m).unwrap();
                    (vecchia_loglik(&model, &locs, &y, &plan).unwrap() - exact).abs()
                })
                .collect();
            assert!(errs[3] < 1e-8 * exact.abs().max(1.0));
            if errs.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
                monotone += 1;
            }
        }
        assert!(monotone >= 18, "monotone on {monotone}/20");
    }

    fn dense_conditional(
        model: &CovarianceModel,
        train: &[SphericalPoint],
        y: &[f64],
        test: &[SphericalPoint],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let all: Vec<_> = train.iter().chain(test).copied().collect();
        let c = crate::covariance::covariance_matrix(&all, model).unwrap();
        let n = train.len();
        let t = test.len();
        let k = c.view((0, 0), (n, n)).into_owned();
        let kx = c.view((n, 0), (t, n)).into_owned();
        let kxx = c.view((n, n), (t, t)).into_owned();
        let chol = k.cholesky().unwrap();
        let mean = &kx * chol.solve(&DVector::from_column_slice(y));
        let cov = &kxx - &kx * chol.solve(&kx.transpose());
        (mean, cov)
    }

    #[test]
    fn predict_full_neighbours_matches_dense() {
        let train = small_cap(30, 12);
        let test = small_cap(5, 13);
        let y = normals(30, 14);
        let model = CovarianceModel::reference_truth(ModelKind::GeneralNonstationary)
            .with_nugget(1e-6)
            .unwrap();
        let preds = vecchia_predict(&model, &train, &y, &test, 30).unwrap();
        let (mean, cov) = dense_conditional(&model, &train, &y, &test);
        for (i, p) in preds.iter().enumerate() {
            assert!((p.mean - mean[i]).abs() < 1e-8);
            assert!((p.variance - cov[(i, i)]).abs() < 1e-8);
        }
    }

    #[test]
    fn predict_interpolates_training_points() {
        let train = small_cap(20, 15);
        let y = normals(20, 16);
        let model = CovarianceModel::reference_truth(ModelKind::AxiallySymmetric);
        let preds = vecchia_predict(&model, &train, &y, &train[3..5], 1).unwrap();
        for (p, &want) in preds.iter().zip(&y[3..5]) {
            assert!((p.mean - want).abs() < 1e-12);
            assert!(p.variance <= 1e-8);
        }
    }

    #[test]
    fn predict_zero_correlation_limit() {
        let train = small_cap(20, 17);
        let y = normals(20, 18);
        // the radial scale stays 1, so cross-correlation decays like √γ
        let model = CovarianceModel::isotropic(-38.0, 1.0, 0.5).unwrap();
        let test = [SphericalPoint::new(2.0, 0.5)];
        let p = vecchia_predict(&model, &train, &y, &test, 5).unwrap()[0];
        assert!(p.mean.abs() < 1e-7, "{p:?}");
        assert!((p.variance - 1.0).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn predict_rejects_empty_training() {
        let model = CovarianceModel::isotropic(-0.5, 1.0, 0.5).unwrap();
        assert!(vecchia_predict(&model, &[], &[], &[SphericalPoint::new(0.0, 0.0)], 3).is_err());
    }

    #[test]
    fn joint_sample_is_seeded() {
        let train = small_cap(25, 19);
        let test = small_cap(6, 20);
        let y = normals(25, 21);
        let model = CovarianceModel::reference_truth(ModelKind::Isotropic);
        let a = joint_predictive_sample(&model, &train, &y, &test, 5, 42).unwrap();
        let b = joint_predictive_sample(&model, &train, &y, &test, 5, 42).unwrap();
        let c = joint_predictive_sample(&model, &train, &y, &test, 5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn joint_single_point_matches_marginal() {
        let train = small_cap(25, 22);
        let y = normals(25, 23);
        let test = [SphericalPoint::new(0.05, 0.02)];
        let model = CovarianceModel::reference_truth(ModelKind::GeneralNonstationary);
        let marginal = vecchia_predict(&model, &train, &y, &test, 8).unwrap()[0];
        let plan = JointSamplingPlan::build(&train, &test, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| plan.sample(&model, &train, &y, &test, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (marginal.variance / n as f64).sqrt();
        let se_var = marginal.variance * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - marginal.mean).abs() < 3.0 * se_mean);
        assert!((var - marginal.variance).abs() < 3.0 * se_var);
    }

    #[test]
    fn joint_correlation_matches_dense() {
        let train = small_cap(30, 25);
        let y = normals(30, 26);
        let test = [SphericalPoint::new(0.7, 0.45), SphericalPoint::new(0.78, 0.5)];
        let model = CovarianceModel::reference_truth(ModelKind::Isotropic);
        let (_, cov) = dense_conditional(&model, &train, &y, &test);
        let want = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        let plan = JointSamplingPlan::build(&train, &test, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| plan.sample(&model, &train, &y, &test, &mut rng).unwrap())
            .collect();
        let mean = |k: usize| draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
        let (m0, m1) = (mean(0), mean(1));
        let cov01 = draws.iter().map(|d| (d[0] - m0) * (d[1] - m1)).sum::<f64>();
        let v0 = draws.iter().map(|d| (d[0] - m0).powi(2)).sum::<f64>();
        let v1 = draws.iter().map(|d| (d[1] - m1).powi(2)).sum::<f64>();
        let got = cov01 / (v0 * v1).sqrt();
        assert!((got - want).abs() < 0.05, "{got} vs {want}");
    }
}
