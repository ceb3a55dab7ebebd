//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use spherecov::covariance::{correlation, covariance, covariance_matrix, local_anisotropy};
use spherecov::geometry::{to_euclidean, to_spherical};
use spherecov::inference::run_mcmc;
use spherecov::pipeline::{mean_score, run_experiment, Scores};
use spherecov::scoring::{crps_mixture, energy_score};
use spherecov::vecchia::{exact_loglik, vecchia_loglik};
use spherecov::{
    CovarianceModel, EuclideanPoint, ExperimentConfig, GammaField, ModelKind, PredictiveMixture, Preset, RamConfig,
    SphericalPoint, VecchiaPlan,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform_sphere<R: Rng>(rng: &mut R) -> SphericalPoint {
    let z: f64 = rng.random_range(-1.0..1.0);
    SphericalPoint::new(rng.random_range(-PI..PI), z.asin())
}

/// Haar-random rotation from a normalized Gaussian quaternion.
fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let q: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(q: &[[f64; 3]; 3], s: SphericalPoint) -> SphericalPoint {
    let p = to_euclidean(s).as_array();
    let r: Vec<f64> = (0..3).map(|i| (0..3).map(|k| q[i][k] * p[k]).sum()).collect();
    let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    to_spherical(EuclideanPoint::from_array([r[0] / n, r[1] / n, r[2] / n])).expect("unit vector")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let model = CovarianceModel::isotropic(-0.5, 1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (a, b) = (uniform_sphere(&mut rng), uniform_sphere(&mut rng));
        let base = correlation(a, b, &model).unwrap();
        for _ in 0..20 {
            let q = random_rotation(&mut rng);
            let r = correlation(rotate(&q, a), rotate(&q, b), &model).unwrap();
            worst = worst.max((r - base).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && secs < 10.0,
        format!("max |rho(Qa,Qb) - rho(a,b)| = {worst:.2e} over 10000 cases, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let model = CovarianceModel::reference_truth(ModelKind::AxiallySymmetric);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (a, b) = (uniform_sphere(&mut rng), uniform_sphere(&mut rng));
        let base = covariance(a, b, &model).unwrap();
        for _ in 0..20 {
            let shift: f64 = rng.random_range(-PI..PI);
            let sa = SphericalPoint::new(a.lon + shift, a.lat);
            let sb = SphericalPoint::new(b.lon + shift, b.lat);
            let c = covariance(sa, sb, &model).unwrap();
            worst = worst.max((c - base).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && secs < 10.0,
        format!("max |C(a+d,b+d) - C(a,b)| = {worst:.2e} over 10000 cases, {secs:.2} s"),
    )
}

fn gp_draw(model: &CovarianceModel, locs: &[SphericalPoint], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = covariance_matrix(locs, model).unwrap().cholesky().unwrap().l();
    let z = DVector::from_fn(locs.len(), |_, _| rng.sample(StandardNormal));
    (l * z).as_slice().to_vec()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let kinds = [
        ModelKind::Isotropic,
        ModelKind::AxiallySymmetric,
        ModelKind::GeneralNonstationary,
    ];
    let mut worst_rel = 0.0f64;
    let mut better = 0;
    for rep in 0..10 {
        let model = CovarianceModel::reference_truth(kinds[rep % 3]).with_nugget(1e-8).unwrap();
        let locs: Vec<SphericalPoint> = (0..60).map(|_| uniform_sphere(&mut rng)).collect();
        let y = gp_draw(&model, &locs, &mut rng);
        let exact = exact_loglik(&model, &locs, &y).unwrap();
        let at = |m: usize| vecchia_loglik(&model, &locs, &y, &VecchiaPlan::build(&locs, m).unwrap()).unwrap();
        worst_rel = worst_rel.max(((at(59) - exact) / exact).abs());
        let (e10, e1) = ((at(10) - exact).abs(), (at(1) - exact).abs());
        if e10.is_finite() && e10 < e1 {
            better += 1;
        }
    }
    outcome(
        worst_rel < 1e-8 && better >= 9,
        format!("m=59 max relative error {worst_rel:.2e}; m=10 beats m=1 on {better}/10"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let kind = [
            ModelKind::Isotropic,
            ModelKind::AxiallySymmetric,
            ModelKind::GeneralNonstationary,
        ][rng.random_range(0..3)];
        let mut b = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let b10 = b(-3.5, -0.3);
        let beta1 = [b10, b(-1.5, 1.5), b(-1.5, 1.5)];
        let beta2 = [b(-3.5, -0.3), b(-1.5, 1.5), b(-1.5, 1.5)];
        let kappa = b(0.0, FRAC_PI_2);
        let nu = [0.5, 1.5, 2.5, b(0.3, 3.0)][rng.random_range(0..4)];
        let model = match kind {
            ModelKind::Isotropic => CovarianceModel::isotropic(b10, 1.0, nu),
            ModelKind::AxiallySymmetric => {
                CovarianceModel::axially_symmetric(beta1[0], beta1[2], beta2[0], beta2[2], 1.0, nu)
            }
            ModelKind::GeneralNonstationary => CovarianceModel::general(beta1, beta2, kappa, 1.0, nu),
        }
        .unwrap();
        let n = rng.random_range(10..=60);
        let locs: Vec<SphericalPoint> = (0..n).map(|_| uniform_sphere(&mut rng)).collect();
        let c: DMatrix<f64> = covariance_matrix(&locs, &model).unwrap();
        let min = SymmetricEigen::new(c).eigenvalues.min();
        worst = worst.min(min);
    }
    outcome(worst >= -1e-8, format!("smallest eigenvalue over 200 configurations {worst:.3e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let s = SphericalPoint::new;
    let mut worst_formula = 0.0f64;
    let mut worst_product = 0.0f64;
    let mut worst_equal = 0.0f64;
    for _ in 0..10_000 {
        let lat: f64 = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let lon: f64 = rng.random_range(-PI..PI);
        let (g1, g2): (f64, f64) = (rng.random_range(-4.0..2.0f64).exp(), rng.random_range(-4.0..2.0f64).exp());
        let model = CovarianceModel::new(
            ModelKind::GeneralNonstationary,
            GammaField::constant(g1.ln()),
            GammaField::constant(g2.ln()),
            0.0,
            1.0,
            0.5,
            0.0,
        )
        .unwrap();
        let det = local_anisotropy(s(lon, lat), &model).unwrap().det();
        let (sl, cl) = lat.sin_cos();
        let formula = g1 * g2 - 4.0 * sl * sl * cl * cl * g1 * (g2 - g1) * (1.0 - g1);
        worst_formula = worst_formula.max((det - formula).abs());
        worst_product = worst_product.max((det - g1 * g2).abs());

        let iso = CovarianceModel::isotropic(g1.ln(), 1.0, 0.5).unwrap();
        let det_iso = local_anisotropy(s(lon, lat), &iso).unwrap().det();
        worst_equal = worst_equal.max((det_iso - g1 * g1).abs());
    }
    outcome(
        worst_formula < 1e-10 && worst_equal < 1e-10,
        format!(
            "max |det - stated formula| = {worst_formula:.3e}; gamma1=gamma2 case max |det - gamma^2| = {worst_equal:.2e}; \
             max |det - gamma1*gamma2| = {worst_product:.2e}"
        ),
    )
}

fn sample_mixture<R: Rng>(mix: &PredictiveMixture, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = mix.len() - 1;
    for (i, w) in mix.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            k = i;
            break;
        }
    }
    let z: f64 = rng.sample(StandardNormal);
    mix.means()[k] + mix.variances()[k].sqrt() * z
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst_se = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(1..=5);
        let means: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let vars: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..2.0)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mix = PredictiveMixture::new(means, vars, weights).unwrap();
        let y: f64 = rng.random_range(-2.5..2.5);
        let exact = crps_mixture(&mix, y).unwrap();
        // CRPS = E|X - y| - E|X - X'|/2 with independent pairs
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (x, xp) = (sample_mixture(&mix, &mut rng), sample_mixture(&mix, &mut rng));
            let t = (x - y).abs() - 0.5 * (x - xp).abs();
            s1 += t;
            s2 += t * t;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        worst_se = worst_se.max((mean - exact).abs() / se);
    }
    // X ~ N(0, I2): E|X| = sqrt(pi/2), E|X - X'| = sqrt(pi)
    let truth = (PI / 2.0).sqrt() - PI.sqrt() / 2.0;
    let samples: Vec<Vec<f64>> = (0..10_000)
        .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let es = energy_score(&samples, &[0.0, 0.0]).unwrap();
    let rel = ((es - truth) / truth).abs();
    outcome(
        worst_se <= 3.0 && rel < 0.02,
        format!("CRPS worst deviation {worst_se:.2} SE over 20 mixtures; energy score {es:.5} vs {truth:.5} (rel {rel:.2e})"),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let rho: f64 = 0.8;
    let det = 1.0 - rho * rho;
    let target = |x: &[f64]| -0.5 * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det;
    let cfg = RamConfig {
        n_iter: 100_000,
        seed: 107,
        ..RamConfig::default()
    };
    let chain = run_mcmc(target, &[0.0, 0.0], vec!["x".into(), "y".into()], &cfg).unwrap();
    let draws = &chain.draws[1000..];
    let n = draws.len() as f64;
    let mean = [0, 1].map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / n);
    let cov = |a: usize, b: usize| draws.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b])).sum::<f64>() / n;
    let (c00, c01, c11) = (cov(0, 0), cov(0, 1), cov(1, 1));
    let acc = chain.acceptance_rate();
    let secs = start.elapsed().as_secs_f64();
    let pass = (acc - 0.234).abs() < 0.05
        && mean.iter().all(|m| m.abs() < 0.05)
        && (c00 - 1.0).abs() < 0.1
        && (c11 - 1.0).abs() < 0.1
        && (c01 - rho).abs() < 0.1
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "acceptance {acc:.3}; means ({:.3}, {:.3}); cov [[{c00:.3}, {c01:.3}], [{c01:.3}, {c11:.3}]]; {secs:.1} s",
            mean[0], mean[1]
        ),
    )
}

const KINDS: [ModelKind; 3] = [
    ModelKind::Isotropic,
    ModelKind::AxiallySymmetric,
    ModelKind::GeneralNonstationary,
];

fn scores_line(records: &[spherecov::pipeline::CellRecord], t: ModelKind, split: &str, f: fn(&Scores) -> f64) -> Vec<f64> {
    KINDS
        .iter()
        .map(|&a| mean_score(records, t, a, split, f).unwrap_or(f64::NAN))
        .collect()
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::layered(
        Preset::Desk,
        None,
        json!({
            "seed": 8,
            "grid": {"n_lon": 20, "n_lat": 20},
            "replicates": 3,
            "splits": [{"scheme": "random", "frac": 0.2}],
            "mcmc": {"n_iter": 1000, "burn_in": 200},
            "m": 10,
            "out_dir": dir.path(),
        }),
    )
    .unwrap();
    let records = run_experiment(&cfg, false).unwrap();
    let failed = records.iter().filter(|r| r.outcome.is_err()).count();
    let rmse = |t| scores_line(&records, t, "random", |s| s.rmse);
    let crps = |t| scores_line(&records, t, "random", |s| s.crps);
    let iso = rmse(ModelKind::Isotropic);
    let spread = (iso.iter().cloned().fold(f64::MIN, f64::max) / iso.iter().cloned().fold(f64::MAX, f64::min)) - 1.0;
    let a = spread <= 0.02;
    let axial = rmse(ModelKind::AxiallySymmetric);
    let b = axial[0] >= 1.05 * axial[1];
    let ns = crps(ModelKind::GeneralNonstationary);
    let c = ns[2] <= ns[1] && ns[1] <= ns[0] && ns[0] >= 1.03 * ns[2];
    let secs = start.elapsed().as_secs_f64();
    let fmt = |v: &[f64]| format!("[{:.4}, {:.4}, {:.4}]", v[0], v[1], v[2]);
    outcome(
        a && b && c && failed == 0 && secs < 1800.0,
        format!(
            "(a) iso-truth RMSE {} spread {:.2}% {}; (b) axial-truth RMSE {} ratio iso/axial {:.3} {}; \
             (c) nonstat-truth CRPS {} gap iso/nonstat {:.2}% {}; failed cells {failed}; {secs:.0} s",
            fmt(&iso),
            100.0 * spread,
            if a { "ok" } else { "FAIL" },
            fmt(&axial),
            axial[0] / axial[1],
            if b { "ok" } else { "FAIL" },
            fmt(&ns),
            100.0 * (ns[0] / ns[2] - 1.0),
            if c { "ok" } else { "FAIL" },
        ),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::layered(
        Preset::Desk,
        None,
        json!({
            "seed": 9,
            "grid": {"n_lon": 36, "n_lat": 24},
            "replicates": 1,
            "true_kinds": ["axially_symmetric"],
            "splits": [{"scheme": "region", "n_regions": 10, "lon_width": 0.4, "lat_width": 0.2, "target_frac": 0.2}],
            "mcmc": {"n_iter": 1000, "burn_in": 200},
            "fixed": {"nu": 2.5},
            "out_dir": dir.path(),
        }),
    )
    .unwrap();
    let records = run_experiment(&cfg, false).unwrap();
    let rmse = scores_line(&records, ModelKind::AxiallySymmetric, "region", |s| s.rmse);
    let n_test = records.iter().find_map(|r| r.outcome.as_ref().ok().map(|s| s.n_test)).unwrap_or(0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rmse[0] > rmse[1],
        format!(
            "region-split RMSE iso {:.4}, axial {:.4}, nonstat {:.4} ({n_test} test points); {secs:.0} s",
            rmse[0], rmse[1], rmse[2]
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failures = 0;
    for (id, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let r = run();
        if !r.pass {
            failures += 1;
        }
        println!("criterion {id}: {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
