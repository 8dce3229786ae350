//! Reference frames, time handling, element conversions, two-body motion and
//! the Lambert solver. Every element-level map is generic over [`DaScalar`],
//! so the same code path serves plain floats and Taylor polynomials.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dapoly::{DaError, DaScalar};

mod elements;
mod lambert;

pub use elements::{
    altequi_to_kep, cart_to_kep, kep_to_altequi, kep_to_cart, kepler_propagate, solve_kepler,
    AltEquinoctialState, CartesianState, KeplerianState,
};
pub use lambert::lambert;

/// Gravitational parameter of the Earth, km^3/s^2.
pub const MU_EARTH: f64 = 398600.4418;
/// WGS84 equatorial radius, km.
pub const R_EARTH: f64 = 6378.137;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257223563;
/// Earth rotation rate, rad/s.
pub const OMEGA_EARTH: f64 = 7.2921158553e-5;
/// Astronomical unit, km.
pub const AU_KM: f64 = 149597870.7;
pub const MU_SUN: f64 = 1.32712440018e11;
pub const MU_MOON: f64 = 4902.800066;

#[derive(Debug, Error)]
pub enum AstroError {
    #[error("state is not elliptic (specific energy {energy:.6e} >= 0)")]
    NotElliptic { energy: f64 },
    #[error("eccentricity {e} outside supported elliptic range")]
    EccentricityRange { e: f64 },
    #[error("radius {r_km:.3} km is below the Earth's surface")]
    Subterranean { r_km: f64 },
    #[error("inclination at the tangent singularity (i = pi)")]
    InclinationSingular,
    #[error("Kepler solver did not converge after {iters} iterations (|dM| = {residual:.3e})")]
    KeplerNonConvergence { iters: usize, residual: f64 },
    #[error("Lambert geometry is near-collinear (transfer angle within {angle:.3e} rad of 0 or pi)")]
    LambertCollinear { angle: f64 },
    #[error("Lambert solver did not converge (time residual {residual:.3e} s)")]
    LambertNonConvergence { residual: f64 },
    #[error("Lambert requires a positive transfer time, got {dt} s")]
    LambertNonPositiveDt { dt: f64 },
    #[error(transparent)]
    Da(#[from] DaError),
}

/// Seconds past the J2000 epoch in one continuous uniform time scale.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Epoch(pub f64);

/// Unix timestamp of 2000-01-01T12:00:00Z.
const J2000_UNIX_SECONDS: i64 = 946_728_000;

impl Epoch {
    pub fn seconds_since_j2000(&self) -> f64 {
        self.0
    }

    pub fn seconds_since(&self, other: Epoch) -> f64 {
        self.0 - other.0
    }

    /// Parse an ISO-8601 / RFC-3339 timestamp, e.g. `2019-02-25T18:49:01.148Z`.
    pub fn parse_iso8601(s: &str) -> Result<Epoch, chrono::ParseError> {
        let dt = chrono::DateTime::parse_from_rfc3339(s)?;
        let ns = dt.timestamp_nanos_opt().unwrap_or(dt.timestamp() * 1_000_000_000);
        Ok(Epoch(ns as f64 / 1e9 - J2000_UNIX_SECONDS as f64))
    }

    /// Render with millisecond resolution, UTC designator.
    pub fn to_iso8601(&self) -> String {
        let total_ns = ((self.0 + J2000_UNIX_SECONDS as f64) * 1e9).round() as i64;
        let dt = chrono::DateTime::from_timestamp_nanos(total_ns);
        dt.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
    }
}

impl std::ops::Add<f64> for Epoch {
    type Output = Epoch;
    fn add(self, rhs: f64) -> Epoch {
        Epoch(self.0 + rhs)
    }
}

impl std::ops::Sub<Epoch> for Epoch {
    type Output = f64;
    fn sub(self, rhs: Epoch) -> f64 {
        self.0 - rhs.0
    }
}

/// Ground station in geodetic coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// Geodetic latitude, rad, in [-pi/2, pi/2].
    pub lat: f64,
    /// Longitude, rad, in [-pi, pi].
    pub lon: f64,
    /// Height above the ellipsoid, km.
    pub height: f64,
}

impl Site {
    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height_km: f64) -> Site {
        Site {
            lat: lat_deg.to_radians(),
            lon: lon_deg.to_radians(),
            height: height_km,
        }
    }
}

/// Greenwich mean sidereal time, rad in [0, 2pi).
///
/// IAU-1982 polynomial in UT1 centuries; UT1 is identified with the uniform
/// scale carried by [`Epoch`].
pub fn gmst(epoch: Epoch) -> f64 {
    let t = epoch.0 / (36525.0 * 86400.0);
    let sec = 67310.54841 + (876600.0 * 3600.0 + 8640184.812866) * t + 0.093104 * t * t
        - 6.2e-6 * t * t * t;
    let frac = sec.rem_euclid(86400.0);
    frac / 86400.0 * std::f64::consts::TAU
}

/// Inertial position and velocity of a ground site at an epoch.
///
/// WGS84 geodetic to Earth-fixed, rotated about z by GMST; the velocity is
/// the Earth-rotation term only.
pub fn site_inertial(site: &Site, epoch: Epoch) -> ([f64; 3], [f64; 3]) {
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let sin_lat = site.lat.sin();
    let cos_lat = site.lat.cos();
    let n = R_EARTH / (1.0 - e2 * sin_lat * sin_lat).sqrt();
    let ecef = [
        (n + site.height) * cos_lat * site.lon.cos(),
        (n + site.height) * cos_lat * site.lon.sin(),
        (n * (1.0 - e2) + site.height) * sin_lat,
    ];
    let theta = gmst(epoch);
    let (s, c) = theta.sin_cos();
    let r = [
        c * ecef[0] - s * ecef[1],
        s * ecef[0] + c * ecef[1],
        ecef[2],
    ];
    let v = [-OMEGA_EARTH * r[1], OMEGA_EARTH * r[0], 0.0];
    (r, v)
}

/// Wrap an angle to (-pi, pi]. Values already in range pass through exactly.
pub fn wrap_angle(a: f64) -> f64 {
    if -std::f64::consts::PI < a && a <= std::f64::consts::PI {
        return a;
    }
    let mut w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w -= std::f64::consts::TAU;
    }
    w
}

/// Smallest signed difference `a - b` on the circle.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

pub(crate) fn lift3<T: DaScalar>(like: &T, v: &[f64; 3]) -> [T; 3] {
    [like.lift(v[0]), like.lift(v[1]), like.lift(v[2])]
}
