//! Points on the unit sphere, 3×3 rotations and the two spherical distances.
//!
//! Angles are radians throughout. Longitude lives in `[-π, π)`, latitude in
//! `[-π/2, π/2]`; at the poles longitude is normalized to 0.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on ‖p‖ − 1 accepted by [`to_spherical`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Location on the sphere as (longitude, latitude) in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    pub lon: f64,
    pub lat: f64,
}

impl SphericalPoint {
    /// Builds a point, wrapping longitude into `[-π, π)`.
    pub fn new(lon: f64, lat: f64) -> Self {
        let mut p = SphericalPoint {
            lon: wrap_lon(lon),
            lat,
        };
        if p.lat.abs() >= FRAC_PI_2 {
            p.lon = 0.0;
        }
        p
    }

    pub fn from_degrees(lon: f64, lat: f64) -> Self {
        Self::new(lon.to_radians(), lat.to_radians())
    }

    pub fn to_euclidean(self) -> EuclideanPoint {
        to_euclidean(self)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Point in ℝ³; unit norm when it represents a location on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EuclideanPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EuclideanPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        EuclideanPoint { x, y, z }
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        EuclideanPoint::new(a[0], a[1], a[2])
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Self {
        EuclideanPoint::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Add for EuclideanPoint {
    type Output = EuclideanPoint;
    fn add(self, o: Self) -> Self {
        EuclideanPoint::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for EuclideanPoint {
    type Output = EuclideanPoint;
    fn sub(self, o: Self) -> Self {
        EuclideanPoint::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Dense 3×3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        Mat3([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Transposed cofactor matrix; `self * adjugate = det * I`.
    pub fn adjugate(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ])
    }

    pub fn apply(&self, p: EuclideanPoint) -> EuclideanPoint {
        let m = &self.0;
        EuclideanPoint::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad_form(&self, v: EuclideanPoint) -> f64 {
        v.dot(self.apply(v))
    }

    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        d
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, rhs: Mat3) -> Mat3 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += rhs.0[i][j];
            }
        }
        Mat3(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Right-handed rotation by `theta` about a coordinate axis.
pub fn rotation(axis: Axis, theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    match axis {
        Axis::X => Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]),
        Axis::Y => Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]),
        Axis::Z => Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
    }
}

/// Rotation carrying the reference point (1, 0, 0) onto `s`.
///
/// Equals `R_z(lon) · R_y(-lat)`. Its columns are the outward normal, the
/// local east direction and the local north direction at `s`.
pub fn local_frame(s: SphericalPoint) -> Mat3 {
    let (sl, cl) = s.lon.sin_cos();
    let (sb, cb) = s.lat.sin_cos();
    Mat3([
        [cl * cb, -sl, -cl * sb],
        [sl * cb, cl, -sl * sb],
        [sb, 0.0, cb],
    ])
}

pub fn to_euclidean(s: SphericalPoint) -> EuclideanPoint {
    let (sl, cl) = s.lon.sin_cos();
    let (sb, cb) = s.lat.sin_cos();
    EuclideanPoint::new(cb * cl, cb * sl, sb)
}

/// Inverse of [`to_euclidean`]. The input must have unit norm within
/// [`UNIT_NORM_TOL`]; it is renormalized before conversion.
pub fn to_spherical(p: EuclideanPoint) -> Result<SphericalPoint> {
    let norm = p.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::InvalidPoint { norm });
    }
    let u = p.scale(1.0 / norm);
    let horiz = u.x.hypot(u.y);
    let lat = u.z.atan2(horiz);
    let lon = if horiz == 0.0 { 0.0 } else { u.y.atan2(u.x) };
    Ok(SphericalPoint::new(lon, lat))
}

pub fn chordal_distance(a: SphericalPoint, b: SphericalPoint) -> f64 {
    euclidean_distance(to_euclidean(a), to_euclidean(b))
}

pub fn euclidean_distance(a: EuclideanPoint, b: EuclideanPoint) -> f64 {
    (a - b).norm()
}

pub fn great_arc_distance(a: SphericalPoint, b: SphericalPoint) -> f64 {
    chord_to_arc(chordal_distance(a, b))
}

/// θ = 2 asin(r/2), with the argument clamped to [-1, 1].
pub fn chord_to_arc(r: f64) -> f64 {
    2.0 * (r / 2.0).clamp(-1.0, 1.0).asin()
}

pub fn arc_to_chord(theta: f64) -> f64 {
    2.0 * (theta / 2.0).sin()
}
