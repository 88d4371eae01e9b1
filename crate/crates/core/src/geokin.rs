//! Earth model, frame conventions and the kinematic rates used by the
//! mechanization and error models.
//!
//! Conventions held throughout the crate:
//! - navigation frame `n` is East-North-Up;
//! - body frame `b` is right-forward-up;
//! - attitude `C_b^n` is built as `Rz(yaw) * Rx(pitch) * Ry(roll)`, i.e. yaw
//!   about Up, then pitch about East, then roll about North;
//! - the earth is a sphere of radius `R`.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Velocity in the ENU navigation frame, `[v_E, v_N, v_U]` in m/s.
pub type VelocityEnu = Vec3;

pub const DEFAULT_RADIUS: f64 = 6_378_137.0;
pub const DEFAULT_EARTH_RATE: f64 = 7.292_115e-5;
pub const DEFAULT_POLE_MARGIN: f64 = 1e-6;
/// Standard gravity used to convert `mg` sensor specifications.
pub const STANDARD_GRAVITY: f64 = 9.806_65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    /// Latitude, radians.
    pub lat: f64,
    /// Longitude, radians.
    pub lon: f64,
    /// Altitude, meters.
    pub alt: f64,
}

impl GeoPosition {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self> {
        let p = GeoPosition { lat, lon, alt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.abs() <= std::f64::consts::FRAC_PI_2)
            || !(self.lon.abs() <= std::f64::consts::PI)
            || !self.alt.is_finite()
        {
            return Err(Error::InvalidInput(format!(
                "position out of range: lat={} lon={} alt={}",
                self.lat, self.lon, self.alt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    /// Earth radius `R`, meters.
    pub radius: f64,
    /// Earth rotation rate, rad/s. Negated in the time-reversed copy.
    pub earth_rate: f64,
    /// Gravity magnitude, m/s^2, held constant over a trajectory.
    pub gravity: f64,
    /// Distance from the poles (rad) inside which the transport rate is refused.
    pub pole_margin: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel::at_latitude(0.0)
    }
}

impl EarthModel {
    pub fn new(radius: f64, earth_rate: f64, gravity: f64) -> Result<Self> {
        if !(radius > 0.0 && earth_rate > 0.0 && gravity > 0.0) {
            return Err(Error::InvalidInput(format!(
                "earth model parameters must be strictly positive (R={radius}, w={earth_rate}, g={gravity})"
            )));
        }
        Ok(EarthModel {
            radius,
            earth_rate,
            gravity,
            pole_margin: DEFAULT_POLE_MARGIN,
        })
    }

    /// Default radius and rotation rate with normal gravity evaluated at `lat`.
    pub fn at_latitude(lat: f64) -> Self {
        EarthModel {
            radius: DEFAULT_RADIUS,
            earth_rate: DEFAULT_EARTH_RATE,
            gravity: normal_gravity(lat),
            pole_margin: DEFAULT_POLE_MARGIN,
        }
    }

    /// Copy with the earth rotation rate negated, as required when the
    /// forward recursion is fed time-reversed data.
    pub fn reversed(&self) -> Self {
        EarthModel {
            earth_rate: -self.earth_rate,
            ..*self
        }
    }

    pub fn for_direction(&self, dir: crate::mech::Direction) -> Self {
        match dir {
            crate::mech::Direction::Forward => *self,
            crate::mech::Direction::Backward => self.reversed(),
        }
    }
}

/// Normal gravity `9.7803267714 (1 + 0.00527094 sin^2 L)`.
pub fn normal_gravity(lat: f64) -> f64 {
    let s = lat.sin();
    9.780_326_771_4 * (1.0 + 0.005_270_94 * s * s)
}

pub fn earth_rate_n(lat: f64, em: &EarthModel) -> Vec3 {
    Vec3::new(0.0, em.earth_rate * lat.cos(), em.earth_rate * lat.sin())
}

pub fn transport_rate_n(v: &VelocityEnu, pos: &GeoPosition, em: &EarthModel) -> Result<Vec3> {
    if pos.lat.abs() >= std::f64::consts::FRAC_PI_2 - em.pole_margin {
        return Err(Error::PolarSingularity {
            lat: pos.lat,
            margin: em.pole_margin,
        });
    }
    let rh = em.radius + pos.alt;
    Ok(Vec3::new(-v.y / rh, v.x / rh, v.x * pos.lat.tan() / rh))
}

pub fn gravity_n(em: &EarthModel) -> Vec3 {
    Vec3::new(0.0, 0.0, -em.gravity)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Euler angles of `C_b^n`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl Euler {
    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Euler { pitch, roll, yaw }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.pitch, self.roll, self.yaw]
    }
}

/// Direction cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcm(Mat3);

impl Dcm {
    pub fn identity() -> Self {
        Dcm(Mat3::identity())
    }

    /// Wraps a matrix without checking orthogonality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Dcm(m)
    }

    /// Wraps a matrix, projecting it onto the rotation group.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        dcm_renormalize(Dcm(m))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Dcm {
        Dcm(self.0.transpose())
    }

    pub fn from_euler(e: Euler) -> Self {
        let (sp, cp) = e.pitch.sin_cos();
        let (sr, cr) = e.roll.sin_cos();
        let (sy, cy) = e.yaw.sin_cos();
        Dcm(Mat3::new(
            cy * cr - sy * sp * sr,
            -sy * cp,
            cy * sr + sy * sp * cr,
            sy * cr + cy * sp * sr,
            cy * cp,
            sy * sr - cy * sp * cr,
            -cp * sr,
            sp,
            cp * cr,
        ))
    }

    /// Inverse of [`Dcm::from_euler`]; pitch in `[-pi/2, pi/2]`.
    pub fn to_euler(&self) -> Euler {
        let m = &self.0;
        Euler {
            pitch: m[(2, 1)].clamp(-1.0, 1.0).asin(),
            roll: (-m[(2, 0)]).atan2(m[(2, 2)]),
            yaw: (-m[(0, 1)]).atan2(m[(1, 1)]),
        }
    }

    /// Frobenius norm of `C^T C - I`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

impl Mul for Dcm {
    type Output = Dcm;
    fn mul(self, rhs: Dcm) -> Dcm {
        Dcm(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Dcm {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Dcm {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

const RENORMALIZE_LIMIT: f64 = 1e-3;

/// Projects `c` onto the nearest rotation matrix (orthogonal polar factor).
pub fn dcm_renormalize(c: Dcm) -> Result<Dcm> {
    let deviation = c.orthogonality_error();
    if !(deviation <= RENORMALIZE_LIMIT) {
        return Err(Error::NotNearOrthogonal { deviation });
    }
    Ok(Dcm(polar_factor(&c.0)))
}

/// Orthogonal polar factor by Newton iteration `X <- (X + X^-T) / 2`.
///
/// Converges quadratically for matrices near the rotation group; the
/// mechanization calls this every step without the range check.
pub(crate) fn polar_factor(m: &Mat3) -> Mat3 {
    let mut x = *m;
    for _ in 0..30 {
        let inv_t = match x.try_inverse() {
            Some(inv) => inv.transpose(),
            None => return x,
        };
        let next = 0.5 * (x + inv_t);
        let delta = (next - x).abs().max();
        x = next;
        if delta <= 1e-16 {
            break;
        }
    }
    x
}

pub const ARCMIN_PER_RAD: f64 = 180.0 * 60.0 / std::f64::consts::PI;

pub fn rad_to_arcmin(x: f64) -> f64 {
    x * ARCMIN_PER_RAD
}

pub fn deg(x: f64) -> f64 {
    x.to_radians()
}
