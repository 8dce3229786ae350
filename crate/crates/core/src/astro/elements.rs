//! Orbital element sets and conversions, generic over the scalar algebra.
//!
//! Degenerate geometries (circular, equatorial) are guarded at the constant
//! part: the affected angles collapse to zero so that float-path conversions
//! of exactly-degenerate states stay well defined. Polynomial-path callers
//! operate away from those singularities.

use crate::dapoly::scalar::{cross3, dot3, norm3, scale3, sub3};
use crate::dapoly::DaScalar;

use super::{wrap_angle, AstroError, R_EARTH};

#[derive(Clone, Debug, PartialEq)]
pub struct CartesianState<T> {
    /// Inertial position, km.
    pub r: [T; 3],
    /// Inertial velocity, km/s.
    pub v: [T; 3],
}

impl<T: DaScalar> CartesianState<T> {
    pub fn to_array(&self) -> [T; 6] {
        [
            self.r[0].clone(),
            self.r[1].clone(),
            self.r[2].clone(),
            self.v[0].clone(),
            self.v[1].clone(),
            self.v[2].clone(),
        ]
    }

    pub fn from_array(x: &[T]) -> Self {
        CartesianState {
            r: [x[0].clone(), x[1].clone(), x[2].clone()],
            v: [x[3].clone(), x[4].clone(), x[5].clone()],
        }
    }
}

/// Classical Keplerian elements: `a` km, `e`, angles rad.
#[derive(Clone, Debug, PartialEq)]
pub struct KeplerianState<T> {
    pub a: T,
    pub e: T,
    pub i: T,
    pub raan: T,
    pub argp: T,
    pub mean_anom: T,
}

/// Alternate equinoctial elements `(n, f, g, h, k, lambda)`.
///
/// The mean motion `n` replaces the semi-major axis and the mean longitude
/// `lambda = raan + argp + M` is kept unwrapped during propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct AltEquinoctialState<T> {
    pub n: T,
    pub f: T,
    pub g: T,
    pub h: T,
    pub k: T,
    pub lambda: T,
}

impl<T: DaScalar> AltEquinoctialState<T> {
    pub fn to_array(&self) -> [T; 6] {
        [
            self.n.clone(),
            self.f.clone(),
            self.g.clone(),
            self.h.clone(),
            self.k.clone(),
            self.lambda.clone(),
        ]
    }

    pub fn from_array(x: &[T]) -> Self {
        AltEquinoctialState {
            n: x[0].clone(),
            f: x[1].clone(),
            g: x[2].clone(),
            h: x[3].clone(),
            k: x[4].clone(),
            lambda: x[5].clone(),
        }
    }
}

/// Shift an angle-valued scalar so its constant part lies in (-pi, pi].
fn wrap_const<T: DaScalar>(x: T) -> T {
    let c = x.const_part();
    x + (wrap_angle(c) - c)
}

const DEGENERATE2: f64 = 1e-24;

pub fn cart_to_kep<T: DaScalar>(
    cart: &CartesianState<T>,
    mu: f64,
) -> Result<KeplerianState<T>, AstroError> {
    let r_vec = &cart.r;
    let v_vec = &cart.v;
    let r = norm3(r_vec)?;
    if r.const_part() < R_EARTH {
        return Err(AstroError::Subterranean {
            r_km: r.const_part(),
        });
    }
    let v2 = dot3(v_vec, v_vec);
    let energy = v2.clone() / 2.0 - r.clone().recip()? * mu;
    if energy.const_part() >= 0.0 {
        return Err(AstroError::NotElliptic {
            energy: energy.const_part(),
        });
    }
    let a = energy.recip()? * (-mu / 2.0);

    let h_vec = cross3(r_vec, v_vec);
    let rv = dot3(r_vec, v_vec);

    // eccentricity vector: ((v^2 - mu/r) r - (r.v) v) / mu
    let coef = (v2 - r.clone().recip()? * mu) / mu;
    let e_vec = sub3(&scale3(r_vec, &coef), &scale3(v_vec, &(rv.clone() / mu)));
    let e2 = dot3(&e_vec, &e_vec);
    let circular = e2.const_part() < DEGENERATE2;
    let e = if circular {
        r.lift(0.0)
    } else {
        e2.sqrt()?
    };
    if e.const_part() >= 1.0 {
        return Err(AstroError::EccentricityRange { e: e.const_part() });
    }

    // inclination from atan2 so that exactly polar/equatorial stays finite
    let h_xy2 = h_vec[0].clone() * h_vec[0].clone() + h_vec[1].clone() * h_vec[1].clone();
    let h_norm2 = dot3(&h_vec, &h_vec);
    let equatorial = h_xy2.const_part() < DEGENERATE2 * h_norm2.const_part().max(1.0);
    let (i, raan, node) = if equatorial {
        let i = if h_vec[2].const_part() >= 0.0 {
            r.lift(0.0)
        } else {
            r.lift(std::f64::consts::PI)
        };
        // node line undefined; use the inertial x-axis as reference
        let node = [r.lift(1.0), r.lift(0.0), r.lift(0.0)];
        (i, r.lift(0.0), node)
    } else {
        let i = h_xy2.sqrt()?.atan2(&h_vec[2])?;
        let raan = h_vec[0].atan2(&(-h_vec[1].clone()))?;
        let node = [-h_vec[1].clone(), h_vec[0].clone(), r.lift(0.0)];
        (i, raan, node)
    };

    // in-plane basis (node, h x node) for the argument of periapsis
    let m_vec = cross3(&h_vec, &node);
    let argp = if circular {
        r.lift(0.0)
    } else {
        let y = dot3(&e_vec, &m_vec);
        let x = dot3(&e_vec, &node).clone() * h_norm2.sqrt()?;
        y.atan2(&x)?
    };

    let mean_anom = if circular {
        // argument of latitude doubles as the anomaly for e = 0
        let y = dot3(r_vec, &m_vec);
        let x = dot3(r_vec, &node).clone() * h_norm2.sqrt()?;
        y.atan2(&x)?
    } else {
        // e sinE and e cosE are exact in (r, v); atan2 absorbs the factor e
        let e_sin_e = rv * (a.clone() * mu).sqrt()?.recip()?;
        let e_cos_e = -(r * a.clone().recip()?) + 1.0;
        let big_e = e_sin_e.atan2(&e_cos_e)?;
        big_e - e_sin_e
    };

    Ok(KeplerianState {
        a,
        e,
        i,
        raan: wrap_const(raan),
        argp: wrap_const(argp),
        mean_anom: wrap_const(mean_anom),
    })
}

pub fn kep_to_cart<T: DaScalar>(
    kep: &KeplerianState<T>,
    mu: f64,
) -> Result<CartesianState<T>, AstroError> {
    if kep.e.const_part() >= 1.0 || kep.e.const_part() < 0.0 {
        return Err(AstroError::EccentricityRange {
            e: kep.e.const_part(),
        });
    }
    if kep.a.const_part() <= 0.0 {
        return Err(AstroError::NotElliptic {
            energy: -mu / (2.0 * kep.a.const_part()),
        });
    }
    let big_e = solve_kepler(&kep.mean_anom, &kep.e)?;
    let sin_e = big_e.sin();
    let cos_e = big_e.cos();
    let one_m_e2 = -(kep.e.clone() * kep.e.clone()) + 1.0;
    let beta = one_m_e2.sqrt()?;

    let x_pf = kep.a.clone() * (cos_e.clone() - kep.e.clone());
    let y_pf = kep.a.clone() * beta.clone() * sin_e.clone();
    let r_mag = kep.a.clone() * (-(kep.e.clone() * cos_e.clone()) + 1.0);
    let v_coef = (kep.a.clone() * mu).sqrt()? * r_mag.recip()?;
    let vx_pf = -(v_coef.clone() * sin_e);
    let vy_pf = v_coef * beta * cos_e;

    let (sin_o, cos_o) = (kep.raan.sin(), kep.raan.cos());
    let (sin_w, cos_w) = (kep.argp.sin(), kep.argp.cos());
    let (sin_i, cos_i) = (kep.i.sin(), kep.i.cos());

    // perifocal -> inertial rotation, first two columns
    let r11 = cos_o.clone() * cos_w.clone() - sin_o.clone() * sin_w.clone() * cos_i.clone();
    let r12 = -(cos_o.clone() * sin_w.clone()) - sin_o.clone() * cos_w.clone() * cos_i.clone();
    let r21 = sin_o.clone() * cos_w.clone() + cos_o.clone() * sin_w.clone() * cos_i.clone();
    let r22 = -(sin_o.clone() * sin_w.clone()) + cos_o.clone() * cos_w.clone() * cos_i.clone();
    let r31 = sin_w.clone() * sin_i.clone();
    let r32 = cos_w * sin_i;

    let lin = |c1: &T, c2: &T, u: &T, w: &T| c1.clone() * u.clone() + c2.clone() * w.clone();
    Ok(CartesianState {
        r: [
            lin(&r11, &r12, &x_pf, &y_pf),
            lin(&r21, &r22, &x_pf, &y_pf),
            lin(&r31, &r32, &x_pf, &y_pf),
        ],
        v: [
            lin(&r11, &r12, &vx_pf, &vy_pf),
            lin(&r21, &r22, &vx_pf, &vy_pf),
            lin(&r31, &r32, &vx_pf, &vy_pf),
        ],
    })
}

/// Eccentric anomaly from an (unwrapped) mean anomaly.
///
/// Scalar Newton iteration on the constant parts to `|dM| < 1e-12`, then a
/// fixed number of algebra-level Newton corrections so the polynomial
/// coefficients converge to the truncation order.
pub fn solve_kepler<T: DaScalar>(mean_anom: &T, e: &T) -> Result<T, AstroError> {
    let m0 = mean_anom.const_part();
    let e0 = e.const_part();
    let mut big_e = m0 + e0 * m0.sin();
    let mut converged = false;
    let mut residual = f64::MAX;
    for _ in 0..50 {
        residual = big_e - e0 * big_e.sin() - m0;
        if residual.abs() < 1e-12 {
            converged = true;
            break;
        }
        big_e -= residual / (1.0 - e0 * big_e.cos());
    }
    if !converged {
        return Err(AstroError::KeplerNonConvergence {
            iters: 50,
            residual: residual.abs(),
        });
    }
    let mut big_e_t = mean_anom.lift(big_e);
    for _ in 0..mean_anom.truncation_order() + 1 {
        let f = big_e_t.clone() - e.clone() * big_e_t.sin() - mean_anom.clone();
        let df = -(e.clone() * big_e_t.cos()) + 1.0;
        big_e_t = big_e_t - f * df.recip()?;
    }
    Ok(big_e_t)
}

/// Two-body propagation by `dt` seconds via the mean anomaly.
pub fn kepler_propagate<T: DaScalar>(
    cart: &CartesianState<T>,
    dt: f64,
    mu: f64,
) -> Result<CartesianState<T>, AstroError> {
    let mut kep = cart_to_kep(cart, mu)?;
    let n = (kep.a.powi(-3)? * mu).sqrt()?;
    kep.mean_anom = kep.mean_anom.clone() + n * dt;
    kep_to_cart(&kep, mu)
}

pub fn kep_to_altequi<T: DaScalar>(
    kep: &KeplerianState<T>,
    mu: f64,
) -> Result<AltEquinoctialState<T>, AstroError> {
    if kep.i.const_part() > std::f64::consts::PI - 1e-9 {
        return Err(AstroError::InclinationSingular);
    }
    let n = (kep.a.powi(-3)? * mu).sqrt()?;
    let lon_peri = kep.argp.clone() + kep.raan.clone();
    let tan_half_i = (kep.i.clone() / 2.0).tan()?;
    Ok(AltEquinoctialState {
        n,
        f: kep.e.clone() * lon_peri.cos(),
        g: kep.e.clone() * lon_peri.sin(),
        h: tan_half_i.clone() * kep.raan.cos(),
        k: tan_half_i * kep.raan.sin(),
        lambda: kep.raan.clone() + kep.argp.clone() + kep.mean_anom.clone(),
    })
}

pub fn altequi_to_kep<T: DaScalar>(
    ae: &AltEquinoctialState<T>,
    mu: f64,
) -> Result<KeplerianState<T>, AstroError> {
    let a = (ae.n.powi(-2)? * mu).powf(1.0 / 3.0)?;
    let e2 = ae.f.clone() * ae.f.clone() + ae.g.clone() * ae.g.clone();
    let (e, lon_peri) = if e2.const_part() < DEGENERATE2 {
        (ae.n.lift(0.0), ae.n.lift(0.0))
    } else {
        (e2.sqrt()?, ae.g.atan2(&ae.f)?)
    };
    let hk2 = ae.h.clone() * ae.h.clone() + ae.k.clone() * ae.k.clone();
    let (i, raan) = if hk2.const_part() < DEGENERATE2 {
        (ae.n.lift(0.0), ae.n.lift(0.0))
    } else {
        (hk2.sqrt()?.atan() * 2.0, ae.k.atan2(&ae.h)?)
    };
    Ok(KeplerianState {
        a,
        e,
        i,
        argp: wrap_const(lon_peri.clone() - raan.clone()),
        raan: wrap_const(raan),
        mean_anom: ae.lambda.clone() - lon_peri,
    })
}
