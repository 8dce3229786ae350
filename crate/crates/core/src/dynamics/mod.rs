//! Dynamics models: analytic low-fidelity propagation, numerical
//! high-fidelity propagation with configurable perturbations, and
//! state-noise-compensation covariance propagation.

use nalgebra::{Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astro::{
    altequi_to_kep, kep_to_altequi, AltEquinoctialState, AstroError, Epoch, MU_EARTH, R_EARTH,
};
use crate::dapoly::{AlgebraSpec, DaError, DaScalar, TaylorPoly};
use crate::linalg;

pub mod forces;
pub mod rk;

pub use rk::RkOptions;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("integrator step underflow at t = {t:.3} s (h = {h:.3e} s)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("integrator exceeded the step budget at t = {t:.3} s")]
    MaxStepsExceeded { t: f64 },
    #[error("radius {r_km:.3} km is below the Earth's surface")]
    Subterranean { r_km: f64 },
    #[error(transparent)]
    Astro(#[from] AstroError),
    #[error(transparent)]
    Da(#[from] DaError),
}

/// Perturbation selection for the high-fidelity model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    /// Zonal gravity truncation: 0 (two-body), 2, 3 or 4.
    pub zonal_degree: u32,
    /// Analytic point-mass Sun and Moon.
    pub sun_moon: bool,
    /// Exponential-atmosphere drag.
    pub drag: bool,
    /// Cannonball radiation pressure with a cylindrical shadow.
    pub srp: bool,
    /// Area-to-mass ratio, m^2/kg.
    pub area_to_mass: f64,
    pub cd: f64,
    pub cr: f64,
}

impl ForceConfig {
    pub fn two_body() -> Self {
        ForceConfig {
            zonal_degree: 0,
            sun_moon: false,
            drag: false,
            srp: false,
            area_to_mass: 0.0,
            cd: 0.0,
            cr: 0.0,
        }
    }

    pub fn j2_only() -> Self {
        ForceConfig {
            zonal_degree: 2,
            ..ForceConfig::two_body()
        }
    }

    pub fn full(area_to_mass: f64, cd: f64, cr: f64) -> Self {
        ForceConfig {
            zonal_degree: 4,
            sun_moon: true,
            drag: true,
            srp: true,
            area_to_mass,
            cd,
            cr,
        }
    }
}

/// White-noise acceleration model: power spectral density of the stochastic
/// acceleration, mapped into the velocity derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// PSD matrix, (km/s^2)^2 * s.
    pub q: Matrix3<f64>,
}

impl NoiseConfig {
    pub fn isotropic(sigma_accel: f64) -> Self {
        NoiseConfig {
            q: Matrix3::identity() * sigma_accel * sigma_accel,
        }
    }

    pub fn zero() -> Self {
        NoiseConfig {
            q: Matrix3::zeros(),
        }
    }
}

/// Analytic low-fidelity propagation of alternate equinoctial elements.
///
/// Two-body mean motion plus first-order secular J2 rates applied in
/// Keplerian space; smooth in the state, hence directly evaluable over
/// polynomials. With J2 disabled only the mean longitude advances.
pub fn lf_propagate<T: DaScalar>(
    state: &AltEquinoctialState<T>,
    t0: Epoch,
    t1: Epoch,
    with_j2: bool,
) -> Result<AltEquinoctialState<T>, DynamicsError> {
    let dt = t1 - t0;
    if !with_j2 {
        return Ok(AltEquinoctialState {
            lambda: state.lambda.clone() + state.n.clone() * dt,
            ..state.clone()
        });
    }
    let kep = altequi_to_kep(state, MU_EARTH)?;
    let e2 = kep.e.clone() * kep.e.clone();
    let one_m_e2 = -e2 + 1.0;
    let p = kep.a.clone() * one_m_e2.clone();
    let re_p = p.recip()? * R_EARTH;
    let cos_i = kep.i.cos();
    let cos2 = cos_i.clone() * cos_i.clone();
    // k2 = 3/2 J2 n (Re/p)^2
    let k2 = state.n.clone() * re_p.clone() * re_p * (1.5 * forces::J2);
    let raan_dot = -(k2.clone() * cos_i);
    let argp_dot = (cos2.clone() * 5.0 - 1.0) * k2.clone() * 0.5;
    let m_dot = (cos2 * 3.0 - 1.0) * k2 * one_m_e2.sqrt()? * 0.5;

    let new_kep = crate::astro::KeplerianState {
        raan: kep.raan.clone() + raan_dot * dt,
        argp: kep.argp.clone() + argp_dot * dt,
        mean_anom: kep.mean_anom.clone() + (state.n.clone() + m_dot) * dt,
        ..kep
    };
    Ok(kep_to_altequi(&new_kep, MU_EARTH)?)
}

/// Time derivative of a Cartesian 6-state under the configured forces.
pub fn hf_derivative<T: DaScalar>(
    epoch: Epoch,
    x: &[T],
    cfg: &ForceConfig,
) -> Result<Vec<T>, DynamicsError> {
    let r = [x[0].clone(), x[1].clone(), x[2].clone()];
    let v = [x[3].clone(), x[4].clone(), x[5].clone()];
    let r2 = r[0].clone() * r[0].clone() + r[1].clone() * r[1].clone() + r[2].clone() * r[2].clone();
    let rn_const = r2.const_part().sqrt();
    if rn_const < R_EARTH {
        return Err(DynamicsError::Subterranean { r_km: rn_const });
    }
    let rn = r2.clone().sqrt()?;
    let inv_r3 = (r2 * rn).recip()?;
    let mut acc = [
        -(r[0].clone() * inv_r3.clone() * MU_EARTH),
        -(r[1].clone() * inv_r3.clone() * MU_EARTH),
        -(r[2].clone() * inv_r3 * MU_EARTH),
    ];
    if cfg.zonal_degree >= 2 {
        let z = forces::zonal_accel(&r, cfg.zonal_degree)?;
        for i in 0..3 {
            acc[i] = acc[i].clone() + z[i].clone();
        }
    }
    if cfg.sun_moon {
        let sun = forces::sun_position(epoch);
        let moon = forces::moon_position(epoch);
        let a_s = forces::third_body_accel(&r, &sun, crate::astro::MU_SUN)?;
        let a_m = forces::third_body_accel(&r, &moon, crate::astro::MU_MOON)?;
        for i in 0..3 {
            acc[i] = acc[i].clone() + a_s[i].clone() + a_m[i].clone();
        }
    }
    if cfg.drag {
        let a_d = forces::drag_accel(&r, &v, cfg.area_to_mass, cfg.cd)?;
        for i in 0..3 {
            acc[i] = acc[i].clone() + a_d[i].clone();
        }
    }
    if cfg.srp {
        let sun = forces::sun_position(epoch);
        let a_p = forces::srp_accel(&r, &sun, cfg.area_to_mass, cfg.cr)?;
        for i in 0..3 {
            acc[i] = acc[i].clone() + a_p[i].clone();
        }
    }
    Ok(vec![
        v[0].clone(),
        v[1].clone(),
        v[2].clone(),
        acc[0].clone(),
        acc[1].clone(),
        acc[2].clone(),
    ])
}

/// Numerically propagate a Cartesian 6-state between epochs.
pub fn hf_propagate<T: DaScalar>(
    x0: &[T],
    t0: Epoch,
    t1: Epoch,
    cfg: &ForceConfig,
    tol: f64,
) -> Result<Vec<T>, DynamicsError> {
    let f = |t: f64, y: &[T]| hf_derivative(Epoch(t), y, cfg);
    rk::integrate(&f, t0.0, t1.0, x0, &RkOptions::with_tol(tol))
}

/// State Jacobian at a point, extracted from a first-order polynomial
/// evaluation of the force model.
pub fn state_jacobian(
    epoch: Epoch,
    x: &Vector6<f64>,
    cfg: &ForceConfig,
) -> Result<Matrix6<f64>, DynamicsError> {
    let spec = AlgebraSpec::new(1, 6);
    let xp: Vec<TaylorPoly> = (0..6)
        .map(|i| TaylorPoly::variable(spec, i, x[i], 1.0))
        .collect::<Result<_, _>>()?;
    let f = hf_derivative(epoch, &xp, cfg)?;
    let mut a = Matrix6::zeros();
    for i in 0..6 {
        for j in 0..6 {
            a[(i, j)] = f[i].linear_coeff(j);
        }
    }
    Ok(a)
}

/// Jointly integrate the state and the process-noise covariance.
///
/// The covariance obeys the Lyapunov-type equation `P' = A P + P A^T + B Q B^T`
/// with `B` mapping the white-noise acceleration into the velocity rows; the
/// state Jacobian `A` is supplied by `jac`, which lets tests force `A = 0`.
pub fn snc_propagate_with_jacobian<J>(
    x0: &Vector6<f64>,
    p0: &Matrix6<f64>,
    t0: Epoch,
    t1: Epoch,
    cfg: &ForceConfig,
    noise: &NoiseConfig,
    tol: f64,
    jac: J,
) -> Result<(Vector6<f64>, Matrix6<f64>), DynamicsError>
where
    J: Fn(Epoch, &Vector6<f64>) -> Result<Matrix6<f64>, DynamicsError>,
{
    let mut y0 = vec![0.0f64; 42];
    for i in 0..6 {
        y0[i] = x0[i];
    }
    for i in 0..6 {
        for j in 0..6 {
            y0[6 + 6 * i + j] = p0[(i, j)];
        }
    }
    let f = |t: f64, y: &[f64]| -> Result<Vec<f64>, DynamicsError> {
        let epoch = Epoch(t);
        let x = Vector6::from_row_slice(&y[0..6]);
        let dx = hf_derivative(epoch, &y[0..6], cfg)?;
        let a = jac(epoch, &x)?;
        let mut p = Matrix6::zeros();
        for i in 0..6 {
            for j in 0..6 {
                p[(i, j)] = y[6 + 6 * i + j];
            }
        }
        let mut dp = a * p + p * a.transpose();
        for i in 0..3 {
            for j in 0..3 {
                dp[(3 + i, 3 + j)] += noise.q[(i, j)];
            }
        }
        let dp = linalg::symmetrize(&dp);
        let mut dy = vec![0.0f64; 42];
        dy[..6].copy_from_slice(&dx);
        for i in 0..6 {
            for j in 0..6 {
                dy[6 + 6 * i + j] = dp[(i, j)];
            }
        }
        Ok(dy)
    };
    let y = rk::integrate(&f, t0.0, t1.0, &y0, &RkOptions::with_tol(tol))?;
    let x = Vector6::from_row_slice(&y[0..6]);
    let mut p = Matrix6::zeros();
    for i in 0..6 {
        for j in 0..6 {
            p[(i, j)] = y[6 + 6 * i + j];
        }
    }
    Ok((x, linalg::symmetrize(&p)))
}

/// SNC propagation with the Jacobian evaluated from the force model.
pub fn snc_propagate(
    x0: &Vector6<f64>,
    p0: &Matrix6<f64>,
    t0: Epoch,
    t1: Epoch,
    cfg: &ForceConfig,
    noise: &NoiseConfig,
    tol: f64,
) -> Result<(Vector6<f64>, Matrix6<f64>), DynamicsError> {
    snc_propagate_with_jacobian(x0, p0, t0, t1, cfg, noise, tol, |t, x| {
        state_jacobian(t, x, cfg)
    })
}
