//! Perturbation force models: zonal harmonics, analytic third bodies,
//! exponential-table drag, cannonball radiation pressure.

use crate::astro::{Epoch, AU_KM, MU_EARTH, OMEGA_EARTH, R_EARTH};
use crate::dapoly::scalar::{dot3, norm3, sub3};
use crate::dapoly::{DaError, DaScalar};

pub const J2: f64 = 1.08263e-3;
pub const J3: f64 = -2.532e-6;
pub const J4: f64 = -1.62e-6;

/// Solar radiation pressure at 1 AU, N/m^2.
pub const SOLAR_PRESSURE: f64 = 4.56e-6;

/// Zonal-harmonic acceleration terms (two-body excluded), km/s^2.
///
/// `degree` 0 disables everything; 2, 3 and 4 enable the terms cumulatively.
pub fn zonal_accel<T: DaScalar>(r: &[T; 3], degree: u32) -> Result<[T; 3], DaError> {
    let zero = r[0].lift(0.0);
    let mut acc = [zero.clone(), zero.clone(), zero];
    if degree < 2 {
        return Ok(acc);
    }
    let r2 = dot3(r, r);
    let rn = r2.sqrt()?;
    let r5 = (r2.clone() * r2.clone() * rn.clone()).recip()?;
    let u = r[2].clone() * r[2].clone() * r2.recip()?; // (z/r)^2

    // J2
    let f2 = -1.5 * J2 * MU_EARTH * R_EARTH * R_EARTH;
    let xy2 = -(u.clone() * 5.0) + 1.0;
    acc[0] = acc[0].clone() + r[0].clone() * xy2.clone() * r5.clone() * f2;
    acc[1] = acc[1].clone() + r[1].clone() * xy2 * r5.clone() * f2;
    acc[2] = acc[2].clone() + r[2].clone() * (-(u.clone() * 5.0) + 3.0) * r5.clone() * f2;

    if degree >= 3 {
        let r7 = r5.clone() * (r2.clone()).recip()?;
        let f3 = J3 * MU_EARTH * R_EARTH.powi(3);
        let xy3 = r[2].clone() * (-(u.clone() * 7.0) + 3.0) * (-2.5 * f3);
        acc[0] = acc[0].clone() + r[0].clone() * xy3.clone() * r7.clone();
        acc[1] = acc[1].clone() + r[1].clone() * xy3 * r7.clone();
        let z3 = (u.clone() * u.clone() * 35.0 - u.clone() * 30.0 + 3.0) * (0.5 * f3);
        acc[2] = acc[2].clone() + z3 * r5.clone();

        if degree >= 4 {
            let f4 = J4 * MU_EARTH * R_EARTH.powi(4);
            let xy4 = (u.clone() * u.clone() * 21.0 - u.clone() * 14.0 + 1.0) * (15.0 / 8.0 * f4);
            acc[0] = acc[0].clone() + r[0].clone() * xy4.clone() * r7.clone();
            acc[1] = acc[1].clone() + r[1].clone() * xy4 * r7.clone();
            let z4 = (u.clone() * u.clone() * 63.0 - u * 70.0 + 15.0) * (5.0 / 8.0 * f4);
            acc[2] = acc[2].clone() + r[2].clone() * z4 * r7;
        }
    }
    Ok(acc)
}

fn centuries(epoch: Epoch) -> f64 {
    epoch.0 / (86400.0 * 36525.0)
}

fn sind(deg: f64) -> f64 {
    deg.to_radians().sin()
}

fn cosd(deg: f64) -> f64 {
    deg.to_radians().cos()
}

/// Low-precision analytic solar position, km, inertial equatorial frame.
/// Arcminute-class accuracy, plenty for third-body and shadow geometry.
pub fn sun_position(epoch: Epoch) -> [f64; 3] {
    let t = centuries(epoch);
    let mean_lon = 280.460 + 36000.771 * t;
    let mean_anom = 357.5291092 + 35999.05034 * t;
    let ecl_lon =
        mean_lon + 1.914666471 * sind(mean_anom) + 0.019994643 * sind(2.0 * mean_anom);
    let r_au = 1.000140612 - 0.016708617 * cosd(mean_anom) - 0.000139589 * cosd(2.0 * mean_anom);
    let obliquity = 23.439291 - 0.0130042 * t;
    let r = r_au * AU_KM;
    [
        r * cosd(ecl_lon),
        r * cosd(obliquity) * sind(ecl_lon),
        r * sind(obliquity) * sind(ecl_lon),
    ]
}

/// Low-precision analytic lunar position, km, inertial equatorial frame.
pub fn moon_position(epoch: Epoch) -> [f64; 3] {
    let t = centuries(epoch);
    let lon = 218.32
        + 481267.8813 * t
        + 6.29 * sind(134.9 + 477198.85 * t)
        - 1.27 * sind(259.2 - 413335.38 * t)
        + 0.66 * sind(235.7 + 890534.23 * t)
        + 0.21 * sind(269.9 + 954397.70 * t)
        - 0.19 * sind(357.5 + 35999.05 * t)
        - 0.11 * sind(186.6 + 966404.05 * t);
    let lat = 5.13 * sind(93.3 + 483202.03 * t) + 0.28 * sind(228.2 + 960400.87 * t)
        - 0.28 * sind(318.3 + 6003.18 * t)
        - 0.17 * sind(217.6 - 407332.20 * t);
    let parallax = 0.9508
        + 0.0518 * cosd(134.9 + 477198.85 * t)
        + 0.0095 * cosd(259.2 - 413335.38 * t)
        + 0.0078 * cosd(235.7 + 890534.23 * t)
        + 0.0028 * cosd(269.9 + 954397.70 * t);
    let obliquity = 23.439291 - 0.0130042 * t;
    let r = R_EARTH / sind(parallax);
    let (cl, sl) = (cosd(lon), sind(lon));
    let (cb, sb) = (cosd(lat), sind(lat));
    let (ce, se) = (cosd(obliquity), sind(obliquity));
    [
        r * cb * cl,
        r * (ce * cb * sl - se * sb),
        r * (se * cb * sl + ce * sb),
    ]
}

/// Point-mass third-body acceleration, direct minus indirect term.
pub fn third_body_accel<T: DaScalar>(
    r: &[T; 3],
    body_pos: &[f64; 3],
    mu_body: f64,
) -> Result<[T; 3], DaError> {
    let body = [
        r[0].lift(body_pos[0]),
        r[0].lift(body_pos[1]),
        r[0].lift(body_pos[2]),
    ];
    let d = sub3(&body, r);
    let dn = norm3(&d)?;
    let d3 = (dn.clone() * dn.clone() * dn).recip()?;
    let bn = (body_pos[0] * body_pos[0] + body_pos[1] * body_pos[1] + body_pos[2] * body_pos[2])
        .sqrt();
    let b3 = bn * bn * bn;
    let mut acc = [r[0].lift(0.0), r[0].lift(0.0), r[0].lift(0.0)];
    for i in 0..3 {
        acc[i] = (d[i].clone() * d3.clone() - body_pos[i] / b3) * mu_body;
    }
    Ok(acc)
}

/// Exponential atmosphere table: `(base altitude km, density kg/m^3, scale height km)`.
const ATMOSPHERE: [(f64, f64, f64); 28] = [
    (0.0, 1.225, 7.249),
    (25.0, 3.899e-2, 6.349),
    (30.0, 1.774e-2, 6.682),
    (40.0, 3.972e-3, 7.554),
    (50.0, 1.057e-3, 8.382),
    (60.0, 3.206e-4, 7.714),
    (70.0, 8.770e-5, 6.549),
    (80.0, 1.905e-5, 5.799),
    (90.0, 3.396e-6, 5.382),
    (100.0, 5.297e-7, 5.877),
    (110.0, 9.661e-8, 7.263),
    (120.0, 2.438e-8, 9.473),
    (130.0, 8.484e-9, 12.636),
    (140.0, 3.845e-9, 16.149),
    (150.0, 2.070e-9, 22.523),
    (180.0, 5.464e-10, 29.740),
    (200.0, 2.789e-10, 37.105),
    (250.0, 7.248e-11, 45.546),
    (300.0, 2.418e-11, 53.628),
    (350.0, 9.518e-12, 53.298),
    (400.0, 3.725e-12, 58.515),
    (450.0, 1.585e-12, 60.828),
    (500.0, 6.967e-13, 63.822),
    (600.0, 1.454e-13, 71.835),
    (700.0, 3.614e-14, 88.667),
    (800.0, 1.170e-14, 124.64),
    (900.0, 5.245e-15, 181.05),
    (1000.0, 3.019e-15, 268.00),
];

/// Atmospheric density at geocentric altitude, kg/m^3.
///
/// The table row is picked by the constant part; the exponential falloff is
/// evaluated in the algebra so density gradients survive the lift.
pub fn atmosphere_density<T: DaScalar>(alt_km: &T) -> T {
    let a0 = alt_km.const_part();
    let row = ATMOSPHERE
        .iter()
        .rev()
        .find(|(h0, _, _)| a0 >= *h0)
        .unwrap_or(&ATMOSPHERE[0]);
    let (h0, rho0, scale) = *row;
    (-(alt_km.clone() - h0) / scale).exp() * rho0
}

/// Atmospheric drag, km/s^2. Velocity is taken relative to the rotating
/// atmosphere; `area_to_mass` in m^2/kg.
pub fn drag_accel<T: DaScalar>(
    r: &[T; 3],
    v: &[T; 3],
    area_to_mass: f64,
    cd: f64,
) -> Result<[T; 3], DaError> {
    let alt = norm3(r)? - R_EARTH;
    let rho = atmosphere_density(&alt);
    let v_rel = [
        v[0].clone() + r[1].clone() * OMEGA_EARTH,
        v[1].clone() - r[0].clone() * OMEGA_EARTH,
        v[2].clone(),
    ];
    let vn = norm3(&v_rel)?;
    // 0.5 * rho[kg/m^3] * (A/m)[m^2/kg] * v^2[km^2/s^2] carries a factor
    // 1000 into km/s^2
    let coef = rho * (-500.0 * cd * area_to_mass) * vn;
    Ok([
        v_rel[0].clone() * coef.clone(),
        v_rel[1].clone() * coef.clone(),
        v_rel[2].clone() * coef,
    ])
}

/// Cannonball solar radiation pressure with a cylindrical shadow, km/s^2.
/// The shadow condition is decided at the constant part.
pub fn srp_accel<T: DaScalar>(
    r: &[T; 3],
    sun: &[f64; 3],
    area_to_mass: f64,
    cr: f64,
) -> Result<[T; 3], DaError> {
    let sn = (sun[0] * sun[0] + sun[1] * sun[1] + sun[2] * sun[2]).sqrt();
    let s_hat = [sun[0] / sn, sun[1] / sn, sun[2] / sn];
    let rc = [
        r[0].const_part(),
        r[1].const_part(),
        r[2].const_part(),
    ];
    let along = rc[0] * s_hat[0] + rc[1] * s_hat[1] + rc[2] * s_hat[2];
    if along < 0.0 {
        let perp2 = rc[0] * rc[0] + rc[1] * rc[1] + rc[2] * rc[2] - along * along;
        if perp2 < R_EARTH * R_EARTH {
            let zero = r[0].lift(0.0);
            return Ok([zero.clone(), zero.clone(), zero]);
        }
    }
    let sun_t = [r[0].lift(sun[0]), r[0].lift(sun[1]), r[0].lift(sun[2])];
    let d = sub3(r, &sun_t);
    let dn = norm3(&d)?;
    // pressure scales with the inverse-square distance from the Sun
    let p = SOLAR_PRESSURE * cr * area_to_mass * 1e-3; // m/s^2 -> km/s^2
    let d3 = dn.clone() * dn.clone() * dn;
    let coef = d3.recip()? * (p * AU_KM * AU_KM);
    Ok([
        d[0].clone() * coef.clone(),
        d[1].clone() * coef.clone(),
        d[2].clone() * coef,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Zonal potential used as an independent gradient oracle.
    fn zonal_potential(r: &[f64; 3], degree: u32) -> f64 {
        let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let s = r[2] / rn;
        let mut sum = 0.0;
        if degree >= 2 {
            sum += J2 * (R_EARTH / rn).powi(2) * 0.5 * (3.0 * s * s - 1.0);
        }
        if degree >= 3 {
            sum += J3 * (R_EARTH / rn).powi(3) * 0.5 * (5.0 * s.powi(3) - 3.0 * s);
        }
        if degree >= 4 {
            sum += J4 * (R_EARTH / rn).powi(4) / 8.0
                * (35.0 * s.powi(4) - 30.0 * s * s + 3.0);
        }
        // disturbing part only; the two-body term is handled elsewhere
        MU_EARTH / rn * sum
    }

    #[test]
    fn zonal_matches_potential_gradient() {
        let pts = [
            [7000.0, 1000.0, 2000.0],
            [-15000.0, 9000.0, -4000.0],
            [26000.0, -3000.0, 1500.0],
        ];
        let h = 1e-3;
        for degree in [2u32, 3, 4] {
            for p in &pts {
                let acc = zonal_accel(p, degree).unwrap();
                for axis in 0..3 {
                    let mut up = *p;
                    up[axis] += h;
                    let mut dn = *p;
                    dn[axis] -= h;
                    let grad =
                        (zonal_potential(&up, degree) - zonal_potential(&dn, degree)) / (2.0 * h);
                    // acceleration is minus the gradient of the disturbing potential
                    assert_relative_eq!(acc[axis], -grad, max_relative = 1e-6, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn j2_equatorial_has_no_z_component() {
        let acc = zonal_accel(&[8000.0, 3000.0, 0.0], 2).unwrap();
        assert_eq!(acc[2], 0.0);
    }

    #[test]
    fn sun_moon_geometry() {
        let e = Epoch::parse_iso8601("2019-02-25T18:49:01Z").unwrap();
        let s = sun_position(e);
        let sd = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        assert!((sd / AU_KM - 1.0).abs() < 0.02, "sun distance {sd}");
        let m = moon_position(e);
        let md = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
        assert!((356000.0..407500.0).contains(&md), "moon distance {md}");
    }

    #[test]
    fn density_decays_and_floors() {
        let d300 = atmosphere_density(&300.0);
        let d400 = atmosphere_density(&400.0);
        assert!(d300 > d400);
        assert!(atmosphere_density(&35000.0) < 1e-60);
        assert_relative_eq!(d300, 2.418e-11, max_relative = 1e-12);
    }

    #[test]
    fn srp_shadow_cylinder() {
        let e = Epoch(0.0);
        let sun = sun_position(e);
        let sn = (sun[0] * sun[0] + sun[1] * sun[1] + sun[2] * sun[2]).sqrt();
        let s_hat = [sun[0] / sn, sun[1] / sn, sun[2] / sn];
        // directly behind the Earth: shadowed
        let behind = [-s_hat[0] * 7000.0, -s_hat[1] * 7000.0, -s_hat[2] * 7000.0];
        let a = srp_accel(&behind, &sun, 0.02, 1.3).unwrap();
        assert_eq!(a[0], 0.0);
        // on the sun side: nonzero, pointing away from the sun
        let front = [s_hat[0] * 7000.0, s_hat[1] * 7000.0, s_hat[2] * 7000.0];
        let a = srp_accel(&front, &sun, 0.02, 1.3).unwrap();
        let along = a[0] * s_hat[0] + a[1] * s_hat[1] + a[2] * s_hat[2];
        assert!(along < 0.0);
        let mag = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        // P * Cr * A/m = 4.56e-6 * 1.3 * 0.02 m/s^2 ~ 1.19e-10 km/s^2
        assert_relative_eq!(mag, 4.56e-6 * 1.3 * 0.02 * 1e-3, max_relative = 0.05);
    }
}
