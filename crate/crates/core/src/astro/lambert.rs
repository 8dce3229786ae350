//! Single-revolution Lambert solver in universal variables.
//!
//! The universal anomaly parameter `z` is bracketed and bisected on the
//! constant parts, then refined with algebra-level Newton corrections so the
//! solution carries polynomial dependence on the boundary positions. Any
//! formulation passing the propagate/solve self-consistency oracle is
//! acceptable; this one follows the classic `y(z)`, `chi(z)` iteration.

use crate::dapoly::scalar::{cross3, dot3, norm3, scale3, sub3};
use crate::dapoly::DaScalar;

use super::AstroError;

/// Stumpff functions `(C(z), S(z))`.
///
/// Closed forms away from zero, series inside `|z| < 0.04` where the closed
/// forms lose digits. The branch is picked on the constant part; both sides
/// agree to machine precision at the switch.
fn stumpff<T: DaScalar>(z: &T) -> Result<(T, T), AstroError> {
    let z0 = z.const_part();
    if z0 > 0.04 {
        let sq = z.sqrt()?;
        let c = (-sq.cos() + 1.0) * z.recip()?;
        let s = (sq.clone() - sq.sin()) * (z.clone() * sq).recip()?;
        Ok((c, s))
    } else if z0 < -0.04 {
        let sq = (-z.clone()).sqrt()?;
        let e = sq.exp();
        let em = e.recip()?;
        let cosh = (e.clone() + em.clone()) / 2.0;
        let sinh = (e - em) / 2.0;
        let c = (cosh - 1.0) * (-z.clone()).recip()?;
        let s = (sinh - sq.clone()) * (-(z.clone() * sq.clone())).recip()?;
        Ok((c, s))
    } else {
        // C = sum (-z)^k / (2k+2)!,  S = sum (-z)^k / (2k+3)!
        let mut c = z.lift(0.0);
        let mut s = z.lift(0.0);
        let mut term = z.lift(1.0);
        let mut fact = 1.0f64; // (2k+1)! running factorial
        for k in 0..9 {
            let f2 = fact * (2 * k + 2) as f64;
            let f3 = f2 * (2 * k + 3) as f64;
            c = c + term.clone() / f2;
            s = s + term.clone() / f3;
            term = -(term * z.clone());
            fact = f3;
        }
        Ok((c, s))
    }
}

/// Time of flight and the auxiliary `y` for a trial `z`.
fn time_of_flight<T: DaScalar>(
    z: &T,
    r1n: &T,
    r2n: &T,
    a_coef: &T,
    mu: f64,
) -> Result<(T, T), AstroError> {
    let (c, s) = stumpff(z)?;
    if c.const_part() <= 0.0 {
        // at the full-revolution pole; callers treat this as "z too large"
        return Err(AstroError::LambertNonConvergence {
            residual: f64::INFINITY,
        });
    }
    let sqrt_c = c.sqrt()?;
    let y = r1n.clone()
        + r2n.clone()
        + a_coef.clone() * (z.clone() * s.clone() - 1.0) * sqrt_c.recip()?;
    if y.const_part() <= 0.0 {
        // no admissible chord yet; callers treat this as "z too small"
        return Err(AstroError::LambertNonConvergence {
            residual: f64::NEG_INFINITY,
        });
    }
    let chi2 = y.clone() * c.recip()?;
    let chi = chi2.sqrt()?;
    let t = (chi.clone() * chi.clone() * chi * s + a_coef.clone() * y.clone().sqrt()?)
        / mu.sqrt();
    Ok((t, y))
}

/// Solve the two-point boundary value problem between `r1` and `r2`.
///
/// Returns the departure and arrival velocities. `dt` must be positive and
/// the geometry single-revolution; transfer angles within ~1e-6 rad of 0 or
/// pi are rejected as collinear.
pub fn lambert<T: DaScalar>(
    r1: &[T; 3],
    r2: &[T; 3],
    dt: f64,
    mu: f64,
    prograde: bool,
) -> Result<([T; 3], [T; 3]), AstroError> {
    if dt <= 0.0 {
        return Err(AstroError::LambertNonPositiveDt { dt });
    }
    let r1n = norm3(r1)?;
    let r2n = norm3(r2)?;
    let cos_dnu = dot3(r1, r2) * (r1n.clone() * r2n.clone()).recip()?;
    let one_p = 1.0 + cos_dnu.const_part();
    let one_m = 1.0 - cos_dnu.const_part();
    // 1 -+ cos(dnu) ~ angle^2/2 near the collinear limits
    let coll_tol = 0.5e-12;
    if one_p < coll_tol || one_m < coll_tol {
        return Err(AstroError::LambertCollinear {
            angle: one_p.min(one_m).max(0.0).sqrt() * std::f64::consts::SQRT_2,
        });
    }
    let cross_z = cross3(r1, r2)[2].const_part();
    let tm = if prograde == (cross_z >= 0.0) { 1.0 } else { -1.0 };
    let a_coef = (r1n.clone() * r2n.clone() * (cos_dnu + 1.0)).sqrt()? * tm;

    // bracket and bisect z on the constant parts
    let r1c = r1n.const_part();
    let r2c = r2n.const_part();
    let ac = a_coef.const_part();
    let tof_scalar = |z: f64| -> f64 {
        match time_of_flight(&z, &r1c, &r2c, &ac, mu) {
            Ok((t, _)) => t,
            Err(AstroError::LambertNonConvergence { residual }) if residual < 0.0 => {
                f64::NEG_INFINITY // y <= 0: z too small
            }
            Err(_) => f64::INFINITY, // full-revolution pole: z too large
        }
    };
    // stay away from z = 4 pi^2 where 1 - cos(sqrt z) cancels to zero
    let z_pole = std::f64::consts::TAU - 1e-4;
    let mut z_lo = -16.0 * std::f64::consts::PI * std::f64::consts::PI;
    let mut z_hi = z_pole * z_pole;
    if tof_scalar(z_lo) - dt > 0.0 || tof_scalar(z_hi) - dt < 0.0 {
        return Err(AstroError::LambertNonConvergence { residual: f64::MAX });
    }
    for _ in 0..200 {
        let mid = 0.5 * (z_lo + z_hi);
        if tof_scalar(mid) - dt < 0.0 {
            z_lo = mid;
        } else {
            z_hi = mid;
        }
    }
    let z_star = 0.5 * (z_lo + z_hi);
    let t_res = (tof_scalar(z_star) - dt).abs();
    if !(t_res < 1e-6 * dt.max(1.0)) {
        return Err(AstroError::LambertNonConvergence { residual: t_res });
    }

    // polynomial refinement: modified Newton with the scalar slope dt/dz
    let h = 1e-6 * z_star.abs().max(1.0);
    let slope = (tof_scalar(z_star + h) - tof_scalar(z_star - h)) / (2.0 * h);
    let mut z_t = r1n.lift(z_star);
    for _ in 0..r1n.truncation_order() + 2 {
        let (t_k, _) = time_of_flight(&z_t, &r1n, &r2n, &a_coef, mu)?;
        z_t = z_t - (t_k - dt) / slope;
    }
    let (_, y) = time_of_flight(&z_t, &r1n, &r2n, &a_coef, mu)?;

    // Lagrange coefficients
    let f = -(y.clone() * r1n.recip()?) + 1.0;
    let g = a_coef * (y.clone() / mu).sqrt()?;
    let g_dot = -(y * r2n.recip()?) + 1.0;
    let g_inv = g.recip()?;
    let v1 = scale3(&sub3(r2, &scale3(r1, &f)), &g_inv);
    let v2 = scale3(&sub3(&scale3(r2, &g_dot), r1), &g_inv);
    Ok((v1, v2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astro::{kep_to_cart, kepler_propagate, CartesianState, KeplerianState, MU_EARTH};
    use approx::assert_relative_eq;

    fn rand_stream(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 33) as f64 / (1u64 << 31) as f64
        }
    }

    #[test]
    fn quarter_circle_transfer() {
        let a = 12000.0;
        let vc = (MU_EARTH / a).sqrt();
        let period = std::f64::consts::TAU * (a / vc);
        let r1 = [a, 0.0, 0.0];
        let r2 = [0.0, a, 0.0];
        let (v1, v2) = lambert(&r1, &r2, period / 4.0, MU_EARTH, true).unwrap();
        assert_relative_eq!(v1[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(v1[1], vc, epsilon = 1e-6);
        assert_relative_eq!(v1[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(v2[0], -vc, epsilon = 1e-6);
    }

    #[test]
    fn self_consistency_random_elliptic() {
        let mut r = rand_stream(2024);
        let mut tested = 0;
        while tested < 1000 {
            let a = 8000.0 + 30000.0 * r();
            let e = 0.6 * r();
            if a * (1.0 - e) < 6700.0 {
                continue;
            }
            let kep = KeplerianState {
                a,
                e,
                i: 0.05 + 1.4 * r(),
                raan: (r() - 0.5) * 6.0,
                argp: (r() - 0.5) * 6.0,
                mean_anom: (r() - 0.5) * 6.0,
            };
            let c0 = kep_to_cart(&kep, MU_EARTH).unwrap();
            let period = std::f64::consts::TAU / (MU_EARTH / a.powi(3)).sqrt();
            let dt = period * (0.05 + 0.4 * r());
            let c1 = kepler_propagate(&c0, dt, MU_EARTH).unwrap();
            // keep away from the collinear limits
            let cosd = (c0.r[0] * c1.r[0] + c0.r[1] * c1.r[1] + c0.r[2] * c1.r[2])
                / ((c0.r[0].powi(2) + c0.r[1].powi(2) + c0.r[2].powi(2)).sqrt()
                    * (c1.r[0].powi(2) + c1.r[1].powi(2) + c1.r[2].powi(2)).sqrt());
            if cosd.abs() > 0.999 {
                continue;
            }
            // all sampled inclinations are below 90 deg, so motion is prograde
            let (v1, v2) = lambert(&c0.r, &c1.r, dt, MU_EARTH, true).unwrap();
            for i in 0..3 {
                assert_relative_eq!(v1[i], c0.v[i], epsilon = 1e-8, max_relative = 1e-8);
                assert_relative_eq!(v2[i], c1.v[i], epsilon = 1e-8, max_relative = 1e-8);
            }
            // arc endpoint check
            let arc = kepler_propagate(
                &CartesianState {
                    r: c0.r,
                    v: v1.clone(),
                },
                dt,
                MU_EARTH,
            )
            .unwrap();
            for i in 0..3 {
                assert_relative_eq!(arc.r[i], c1.r[i], epsilon = 1e-6);
            }
            tested += 1;
        }
    }

    #[test]
    fn prograde_flag_flips_out_of_plane_velocity() {
        let r1 = [9000.0, 1000.0, 200.0];
        let r2 = [2000.0, 9500.0, -300.0];
        let dt = 2500.0;
        let (v_pro, _) = lambert(&r1, &r2, dt, MU_EARTH, true).unwrap();
        let (v_ret, _) = lambert(&r1, &r2, dt, MU_EARTH, false).unwrap();
        // plane normal h = r1 x v flips side
        let h_pro = r1[0] * v_pro[1] - r1[1] * v_pro[0];
        let h_ret = r1[0] * v_ret[1] - r1[1] * v_ret[0];
        assert!(h_pro > 0.0 && h_ret < 0.0);
    }

    #[test]
    fn collinear_geometry_rejected() {
        let r1 = [10000.0, 0.0, 0.0];
        let r2 = [12000.0, 1e-9, 0.0];
        assert!(matches!(
            lambert(&r1, &r2, 1000.0, MU_EARTH, true),
            Err(AstroError::LambertCollinear { .. })
        ));
        let r3 = [-15000.0, 1e-9, 0.0];
        assert!(matches!(
            lambert(&r1, &r3, 1000.0, MU_EARTH, true),
            Err(AstroError::LambertCollinear { .. })
        ));
        assert!(lambert(&r1, &r2, -5.0, MU_EARTH, true).is_err());
    }
}
