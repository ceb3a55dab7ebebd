//! Nonstationary, locally anisotropic Matérn covariance on the sphere.
//!
//! Each location `s` carries a 3×3 SPD anisotropy matrix
//!
//! ```text
//! Σ(s) = F(s) Rx(κ) diag(1, γ₁(s), γ₂(s)) Rx(κ)ᵀ F(s)ᵀ
//! ```
//!
//! where `F(s)` is the [`local_frame`] carrying (1, 0, 0) onto `s`. Two
//! locations are compared through the Mahalanobis distance `q` under the
//! averaged matrix and a determinant normalizer `c`; the covariance is
//! `σ(sᵢ)σ(sⱼ)·c·M_ν̄(q)` plus an optional nugget on the diagonal.

mod bessel;
mod matern;

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use bessel::{bessel_k, bessel_k_scaled};
pub use matern::matern;

use crate::error::{Error, Result};
use crate::geometry::{local_frame, rotation, to_euclidean, Axis, EuclideanPoint, Mat3, SphericalPoint};
use matern::matern_unchecked;

/// Largest magnitude of the γ linear predictor accepted before exponentiation.
pub const GAMMA_LINK_LIMIT: f64 = 40.0;

/// Log-linear scale field `γ(s) = exp(b₀ + b₁ sin(lon) + b₂ lat)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GammaField {
    pub coef: [f64; 3],
}

impl GammaField {
    pub const fn new(b0: f64, b1: f64, b2: f64) -> Self {
        GammaField { coef: [b0, b1, b2] }
    }

    pub const fn constant(b0: f64) -> Self {
        GammaField::new(b0, 0.0, 0.0)
    }

    pub fn linear_predictor(&self, s: SphericalPoint) -> f64 {
        self.coef[0] + self.coef[1] * s.lon.sin() + self.coef[2] * s.lat
    }

    pub fn eval(&self, s: SphericalPoint) -> Result<f64> {
        let eta = self.linear_predictor(s);
        if !(eta.abs() <= GAMMA_LINK_LIMIT) {
            return Err(Error::ParameterOverflow {
                value: eta,
                limit: GAMMA_LINK_LIMIT,
            });
        }
        Ok(eta.exp())
    }
}

/// The three nested covariance structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Constant `γ₁ = γ₂`, `κ = 0`.
    Isotropic,
    /// Latitude-only γ fields, `κ = 0`.
    AxiallySymmetric,
    /// All six β coefficients and `κ` free.
    GeneralNonstationary,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Isotropic,
        ModelKind::AxiallySymmetric,
        ModelKind::GeneralNonstationary,
    ];

    /// Names of the free parameters, in the order used by
    /// [`CovarianceModel::from_free`].
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Isotropic => &["beta0"],
            ModelKind::AxiallySymmetric => &["beta10", "beta12", "beta20", "beta22"],
            ModelKind::GeneralNonstationary => {
                &["beta10", "beta11", "beta12", "beta20", "beta21", "beta22", "kappa"]
            }
        }
    }

    pub fn n_free(self) -> usize {
        self.param_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Isotropic => "isotropic",
            ModelKind::AxiallySymmetric => "axially_symmetric",
            ModelKind::GeneralNonstationary => "general_nonstationary",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" | "iso" => Ok(ModelKind::Isotropic),
            "axially_symmetric" | "axial" => Ok(ModelKind::AxiallySymmetric),
            "general_nonstationary" | "general" | "nonstationary" => Ok(ModelKind::GeneralNonstationary),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Flat serialized form of a [`CovarianceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta1: [f64; 3],
    pub beta2: [f64; 3],
    pub kappa: f64,
    pub sigma: f64,
    pub nu: f64,
    pub nugget: f64,
    pub kind: ModelKind,
}

/// Covariance model; immutable once validated.
///
/// `sigma` and `nu` are constant fields and `kappa` is a single global
/// rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParams", into = "ModelParams")]
pub struct CovarianceModel {
    kind: ModelKind,
    gamma1: GammaField,
    gamma2: GammaField,
    kappa: f64,
    sigma: f64,
    nu: f64,
    nugget: f64,
}

impl TryFrom<ModelParams> for CovarianceModel {
    type Error = Error;

    fn try_from(p: ModelParams) -> Result<Self> {
        CovarianceModel::new(
            p.kind,
            GammaField { coef: p.beta1 },
            GammaField { coef: p.beta2 },
            p.kappa,
            p.sigma,
            p.nu,
            p.nugget,
        )
    }
}

impl From<CovarianceModel> for ModelParams {
    fn from(m: CovarianceModel) -> Self {
        ModelParams {
            beta1: m.gamma1.coef,
            beta2: m.gamma2.coef,
            kappa: m.kappa,
            sigma: m.sigma,
            nu: m.nu,
            nugget: m.nugget,
            kind: m.kind,
        }
    }
}

impl CovarianceModel {
    /// Validating constructor. Coefficients masked out by `kind` must be
    /// exactly zero, and the isotropic kind requires `β₁₀ = β₂₀`.
    pub fn new(
        kind: ModelKind,
        gamma1: GammaField,
        gamma2: GammaField,
        kappa: f64,
        sigma: f64,
        nu: f64,
        nugget: f64,
    ) -> Result<Self> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("{kind} model: {what}")));
        if !(0.0..FRAC_PI_2).contains(&kappa) {
            return bad("kappa must lie in [0, pi/2)");
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidSmoothness(nu));
        }
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return bad("nugget must be >= 0");
        }
        if gamma1.coef.iter().chain(&gamma2.coef).any(|b| !b.is_finite()) {
            return bad("beta coefficients must be finite");
        }
        let [b10, b11, b12] = gamma1.coef;
        let [b20, b21, b22] = gamma2.coef;
        match kind {
            ModelKind::Isotropic => {
                if b11 != 0.0 || b12 != 0.0 || b21 != 0.0 || b22 != 0.0 || kappa != 0.0 {
                    return bad("only beta10 = beta20 may be nonzero");
                }
                if b10 != b20 {
                    return bad("requires beta10 == beta20");
                }
            }
            ModelKind::AxiallySymmetric => {
                if b11 != 0.0 || b21 != 0.0 || kappa != 0.0 {
                    return bad("beta11, beta21 and kappa must be 0");
                }
            }
            ModelKind::GeneralNonstationary => {}
        }
        Ok(CovarianceModel {
            kind,
            gamma1,
            gamma2,
            kappa,
            sigma,
            nu,
            nugget,
        })
    }

    pub fn isotropic(beta0: f64, sigma: f64, nu: f64) -> Result<Self> {
        let g = GammaField::constant(beta0);
        Self::new(ModelKind::Isotropic, g, g, 0.0, sigma, nu, 0.0)
    }

    /// `β₁ = (β₁₀, 0, β₁₂)`, `β₂ = (β₂₀, 0, β₂₂)`.
    pub fn axially_symmetric(b10: f64, b12: f64, b20: f64, b22: f64, sigma: f64, nu: f64) -> Result<Self> {
        Self::new(
            ModelKind::AxiallySymmetric,
            GammaField::new(b10, 0.0, b12),
            GammaField::new(b20, 0.0, b22),
            0.0,
            sigma,
            nu,
            0.0,
        )
    }

    pub fn general(beta1: [f64; 3], beta2: [f64; 3], kappa: f64, sigma: f64, nu: f64) -> Result<Self> {
        Self::new(
            ModelKind::GeneralNonstationary,
            GammaField { coef: beta1 },
            GammaField { coef: beta2 },
            kappa,
            sigma,
            nu,
            0.0,
        )
    }

    /// Simulation truths used in the numerical study: `σ = 1`, `ν = 0.5`.
    pub fn reference_truth(kind: ModelKind) -> Self {
        let built = match kind {
            ModelKind::Isotropic => Self::isotropic(-0.5, 1.0, 0.5),
            ModelKind::AxiallySymmetric => Self::axially_symmetric(-0.5, 1.44, -3.2, 1.44, 1.0, 0.5),
            ModelKind::GeneralNonstationary => {
                Self::general([-0.5, -1.2, 1.44], [-3.2, -0.3, 1.44], 0.8, 1.0, 0.5)
            }
        };
        built.expect("reference parameters are valid")
    }

    /// Builds a model of `kind` from its free parameters on the constrained
    /// scale (see [`ModelKind::param_names`]).
    pub fn from_free(kind: ModelKind, free: &[f64], sigma: f64, nu: f64, nugget: f64) -> Result<Self> {
        if free.len() != kind.n_free() {
            return Err(Error::InvalidInput(format!(
                "{kind} model takes {} free parameters, got {}",
                kind.n_free(),
                free.len()
            )));
        }
        let (g1, g2, kappa) = match kind {
            ModelKind::Isotropic => (GammaField::constant(free[0]), GammaField::constant(free[0]), 0.0),
            ModelKind::AxiallySymmetric => (
                GammaField::new(free[0], 0.0, free[1]),
                GammaField::new(free[2], 0.0, free[3]),
                0.0,
            ),
            ModelKind::GeneralNonstationary => (
                GammaField::new(free[0], free[1], free[2]),
                GammaField::new(free[3], free[4], free[5]),
                free[6],
            ),
        };
        Self::new(kind, g1, g2, kappa, sigma, nu, nugget)
    }

    pub fn free_values(&self) -> Vec<f64> {
        let [b10, b11, b12] = self.gamma1.coef;
        let [b20, b21, b22] = self.gamma2.coef;
        match self.kind {
            ModelKind::Isotropic => vec![b10],
            ModelKind::AxiallySymmetric => vec![b10, b12, b20, b22],
            ModelKind::GeneralNonstationary => vec![b10, b11, b12, b20, b21, b22, self.kappa],
        }
    }

    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidInput("nugget must be >= 0".into()));
        }
        self.nugget = nugget;
        Ok(self)
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidSmoothness(nu));
        }
        self.nu = nu;
        Ok(self)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn gamma1(&self) -> GammaField {
        self.gamma1
    }
    pub fn gamma2(&self) -> GammaField {
        self.gamma2
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn sigma_at(&self, _s: SphericalPoint) -> f64 {
        self.sigma
    }

    pub fn nu_at(&self, _s: SphericalPoint) -> f64 {
        self.nu
    }

    pub fn params(&self) -> ModelParams {
        self.clone().into()
    }

    /// Precomputes everything that depends on a single location.
    pub fn prepare(&self, s: SphericalPoint) -> Result<PreparedSite> {
        let g1 = self.gamma1.eval(s)?;
        let g2 = self.gamma2.eval(s)?;
        let a = local_frame(s) * rotation(Axis::X, self.kappa);
        let (r1, r2) = (g1.sqrt(), g2.sqrt());
        let mut factor = a;
        for row in factor.0.iter_mut() {
            row[1] *= r1;
            row[2] *= r2;
        }
        Ok(PreparedSite {
            point: to_euclidean(s),
            factor,
            // |Σ(s)| = γ₁γ₂ since Σ(s) is a rotation of diag(1, γ₁, γ₂)
            det_root4: (r1 * r2).sqrt(),
            sigma: self.sigma_at(s),
            nu: self.nu_at(s),
        })
    }

    pub fn prepare_all(&self, locs: &[SphericalPoint]) -> Result<Vec<PreparedSite>> {
        locs.iter().map(|&s| self.prepare(s)).collect()
    }
}

/// Per-location quantities needed by [`pair_covariance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedSite {
    pub point: EuclideanPoint,
    /// Square-root factor `F` with `F Fᵀ = Σ(s)`.
    pub factor: Mat3,
    /// `|Σ(s)|^{1/4}`
    pub det_root4: f64,
    pub sigma: f64,
    pub nu: f64,
}

/// `(q, c)` between two prepared sites.
///
/// `Σᵢ + Σⱼ = N̂ᵀN̂` with `N̂ = [Fᵢ Fⱼ]ᵀ` (6×3). A Householder QR of `N̂`
/// gives its Cholesky factor `R` without forming the sum, which keeps the
/// determinant and solve accurate when some γ are far below machine epsilon.
#[inline]
pub fn pair_geometry(a: &PreparedSite, b: &PreparedSite) -> (f64, f64) {
    // fixed argument order so that swapping sites is bit-for-bit symmetric
    let key = |p: &PreparedSite| (p.point.x, p.point.y, p.point.z);
    let (a, b) = if key(a) <= key(b) { (a, b) } else { (b, a) };
    // column-major 6×3: n[col][row]
    let mut n = [[0.0f64; 6]; 3];
    for (col, column) in n.iter_mut().enumerate() {
        for k in 0..3 {
            column[k] = a.factor.0[col][k];
            column[k + 3] = b.factor.0[col][k];
        }
    }
    let mut r = [[0.0f64; 3]; 3];
    for k in 0..3 {
        let norm = n[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let alpha = if n[k][k] > 0.0 { -norm } else { norm };
        r[k][k] = alpha;
        if norm == 0.0 {
            continue;
        }
        let mut v = [0.0f64; 6];
        v[k..].copy_from_slice(&n[k][k..]);
        v[k] -= alpha;
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in (k + 1)..3 {
            let proj: f64 = (k..6).map(|i| v[i] * n[j][i]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..6 {
                n[j][i] -= proj * v[i];
            }
            r[k][j] = n[j][k];
        }
    }
    // Rᵀ w = d, q² = 2‖w‖²
    let d = (a.point - b.point).as_array();
    let mut w = [0.0f64; 3];
    for i in 0..3 {
        let mut s = d[i];
        for k in 0..i {
            s -= r[k][i] * w[k];
        }
        w[i] = s / r[i][i];
    }
    let q = (2.0 * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2])).sqrt();
    // |(Σa+Σb)/2|^{1/2} = |r00 r11 r22| / √8
    let half_root = (r[0][0] * r[1][1] * r[2][2]).abs() / 8f64.sqrt();
    let c = a.det_root4 * b.det_root4 / half_root;
    (q, c)
}

/// Cross-covariance between two prepared sites, without nugget.
#[inline]
pub fn pair_covariance(a: &PreparedSite, b: &PreparedSite) -> f64 {
    if a.point == b.point {
        return a.sigma * b.sigma;
    }
    let (q, c) = pair_geometry(a, b);
    a.sigma * b.sigma * c * matern_unchecked(q, 0.5 * (a.nu + b.nu))
}

/// Local anisotropy matrix `Σ(s)`.
pub fn local_anisotropy(s: SphericalPoint, model: &CovarianceModel) -> Result<Mat3> {
    let g1 = model.gamma1.eval(s)?;
    let g2 = model.gamma2.eval(s)?;
    let a = local_frame(s) * rotation(Axis::X, model.kappa);
    let at = a.transpose();
    let mut out = a * Mat3::diag(1.0, g1, g2) * at;
    // symmetrize away rounding from the triple product
    for i in 0..3 {
        for j in (i + 1)..3 {
            let m = 0.5 * (out.0[i][j] + out.0[j][i]);
            out.0[i][j] = m;
            out.0[j][i] = m;
        }
    }
    Ok(out)
}

fn check_pair(q: f64, c: f64) -> Result<()> {
    if !(q.is_finite() && c.is_finite() && c > 0.0) {
        return Err(Error::NumericalSingularity {
            index: 0,
            detail: format!("anisotropy sum is numerically singular (q = {q}, c = {c})"),
        });
    }
    Ok(())
}

/// Mahalanobis distance `q(sᵢ, sⱼ)` under the averaged anisotropy matrix.
pub fn mahalanobis_q(si: SphericalPoint, sj: SphericalPoint, model: &CovarianceModel) -> Result<f64> {
    let (a, b) = (model.prepare(si)?, model.prepare(sj)?);
    let (q, c) = pair_geometry(&a, &b);
    check_pair(q, c)?;
    Ok(q)
}

/// Normalizer `c(sᵢ, sⱼ) ∈ (0, 1]`.
pub fn normalizer_c(si: SphericalPoint, sj: SphericalPoint, model: &CovarianceModel) -> Result<f64> {
    let (a, b) = (model.prepare(si)?, model.prepare(sj)?);
    let (q, c) = pair_geometry(&a, &b);
    check_pair(q, c)?;
    Ok(c)
}

/// Nonstationary correlation `c · M_ν̄(q)`, excluding σ and nugget.
pub fn correlation(si: SphericalPoint, sj: SphericalPoint, model: &CovarianceModel) -> Result<f64> {
    let (a, b) = (model.prepare(si)?, model.prepare(sj)?);
    if a.point == b.point {
        return Ok(1.0);
    }
    let (q, c) = pair_geometry(&a, &b);
    check_pair(q, c)?;
    Ok(c * matern_unchecked(q, 0.5 * (a.nu + b.nu)))
}

/// `C(sᵢ, sⱼ)`, with the nugget added when the two points coincide.
pub fn covariance(si: SphericalPoint, sj: SphericalPoint, model: &CovarianceModel) -> Result<f64> {
    let (a, b) = (model.prepare(si)?, model.prepare(sj)?);
    if a.point != b.point {
        let (q, c) = pair_geometry(&a, &b);
        check_pair(q, c)?;
    }
    let mut v = pair_covariance(&a, &b);
    if a.point == b.point {
        v += model.nugget;
    }
    Ok(v)
}

/// Returns the first pair of indices holding identical locations, if any.
pub fn find_duplicate(locs: &[SphericalPoint]) -> Option<(usize, usize)> {
    let mut idx: Vec<usize> = (0..locs.len()).collect();
    let key = |i: usize| {
        let p = to_euclidean(locs[i]);
        (p.x.to_bits() as i64, p.y.to_bits() as i64, p.z.to_bits() as i64)
    };
    idx.sort_by_key(|&i| (key(i), i));
    idx.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (to_euclidean(locs[a]) == to_euclidean(locs[b])).then(|| (a.min(b), a.max(b)))
    })
}

/// Dense covariance matrix over `locs`, nugget on the diagonal.
pub fn covariance_matrix(locs: &[SphericalPoint], model: &CovarianceModel) -> Result<DMatrix<f64>> {
    if model.nugget == 0.0 {
        if let Some((first, second)) = find_duplicate(locs) {
            return Err(Error::DuplicateLocation { first, second });
        }
    }
    let sites = model.prepare_all(locs)?;
    Ok(covariance_matrix_prepared(&sites, model.nugget))
}

pub(crate) fn covariance_matrix_prepared(sites: &[PreparedSite], nugget: f64) -> DMatrix<f64> {
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = pair_covariance(&sites[i], &sites[i]) + nugget;
        for j in 0..i {
            let v = pair_covariance(&sites[i], &sites[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}
