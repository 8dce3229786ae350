//! Univariate Maclaurin coefficient sequences used to lift elementary
//! functions onto polynomials.
//!
//! For each supported function `f` and expansion point `a0`, these return the
//! coefficients `c_k = f^(k)(a0) / k!` for `k = 0..=n`, so that
//! `f(a0 + q) = sum c_k q^k + O(q^{n+1})`.

use super::DaError;

pub(crate) fn exp(a0: f64, n: usize) -> Vec<f64> {
    let e = a0.exp();
    let mut c = vec![e; n + 1];
    let mut fact = 1.0;
    for (k, ck) in c.iter_mut().enumerate().skip(1) {
        fact *= k as f64;
        *ck = e / fact;
    }
    c
}

pub(crate) fn ln(a0: f64, n: usize) -> Result<Vec<f64>, DaError> {
    if a0 <= 0.0 {
        return Err(DaError::DomainViolation { func: "log", at: a0 });
    }
    let mut c = vec![a0.ln()];
    for k in 1..=n {
        c.push(-(-1.0f64).powi(k as i32) / (k as f64 * a0.powi(k as i32)));
    }
    Ok(c)
}

pub(crate) fn sqrt(a0: f64, n: usize) -> Result<Vec<f64>, DaError> {
    if a0 <= 0.0 {
        return Err(DaError::DomainViolation { func: "sqrt", at: a0 });
    }
    // c_k = sqrt(a0) * C(1/2, k) / a0^k via the binomial recurrence.
    let mut c = vec![a0.sqrt()];
    for k in 1..=n {
        let prev = c[k - 1];
        c.push(prev * (0.5 - (k as f64 - 1.0)) / (k as f64 * a0));
    }
    Ok(c)
}

pub(crate) fn recip(a0: f64, n: usize) -> Result<Vec<f64>, DaError> {
    if a0 == 0.0 {
        return Err(DaError::DomainViolation {
            func: "reciprocal",
            at: a0,
        });
    }
    let mut c = Vec::with_capacity(n + 1);
    let mut v = 1.0 / a0;
    for _ in 0..=n {
        c.push(v);
        v *= -1.0 / a0;
    }
    Ok(c)
}

/// Real power `x^alpha` around `a0 > 0`: `c_k = C(alpha, k) a0^(alpha-k)`.
pub(crate) fn powf(a0: f64, alpha: f64, n: usize) -> Result<Vec<f64>, DaError> {
    if a0 <= 0.0 {
        return Err(DaError::DomainViolation { func: "power", at: a0 });
    }
    let mut c = vec![a0.powf(alpha)];
    for k in 1..=n {
        let prev = c[k - 1];
        c.push(prev * (alpha - (k as f64 - 1.0)) / (k as f64 * a0));
    }
    Ok(c)
}

pub(crate) fn sin(a0: f64, n: usize) -> Vec<f64> {
    deriv_cycle(a0, n, false)
}

pub(crate) fn cos(a0: f64, n: usize) -> Vec<f64> {
    deriv_cycle(a0, n, true)
}

fn deriv_cycle(a0: f64, n: usize, cosine: bool) -> Vec<f64> {
    let shift = if cosine {
        std::f64::consts::FRAC_PI_2
    } else {
        0.0
    };
    let mut fact = 1.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                fact *= k as f64;
            }
            (a0 + shift + k as f64 * std::f64::consts::FRAC_PI_2).sin() / fact
        })
        .collect()
}

/// `asin` around `|a0| < 1`, by integrating the series of `(1 - x^2)^(-1/2)`.
pub(crate) fn asin(a0: f64, n: usize) -> Result<Vec<f64>, DaError> {
    if a0.abs() >= 1.0 {
        return Err(DaError::DomainViolation { func: "asin", at: a0 });
    }
    let w = [1.0 - a0 * a0, -2.0 * a0, -1.0];
    let g = useries_powf(&w, -0.5, n.saturating_sub(1));
    let mut c = vec![a0.asin()];
    for k in 1..=n {
        c.push(g[k - 1] / k as f64);
    }
    Ok(c)
}

/// `atan` around any `a0`, by integrating the series of `1 / (1 + x^2)`.
pub(crate) fn atan(a0: f64, n: usize) -> Vec<f64> {
    let w = [1.0 + a0 * a0, 2.0 * a0, 1.0];
    let g = useries_powf(&w, -1.0, n.saturating_sub(1));
    let mut c = vec![a0.atan()];
    for k in 1..=n {
        c.push(g[k - 1] / k as f64);
    }
    c
}

/// Truncated coefficients of `w(t)^alpha` for a univariate `w` with `w[0] > 0`.
fn useries_powf(w: &[f64], alpha: f64, n: usize) -> Vec<f64> {
    let w0 = w[0];
    // u = w/w0 - 1 has no constant term; (1+u)^alpha by the binomial series.
    let mut u = vec![0.0; n + 1];
    for (k, uk) in u.iter_mut().enumerate().skip(1) {
        if k < w.len() {
            *uk = w[k] / w0;
        }
    }
    let mut out = vec![0.0; n + 1];
    out[0] = 1.0;
    let mut upow = vec![0.0; n + 1];
    upow[0] = 1.0;
    let mut binom = 1.0;
    for k in 1..=n {
        binom *= (alpha - (k as f64 - 1.0)) / k as f64;
        upow = umul(&upow, &u, n);
        for i in 0..=n {
            out[i] += binom * upow[i];
        }
    }
    let scale = w0.powf(alpha);
    out.iter_mut().for_each(|c| *c *= scale);
    out
}

fn umul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for i in 0..=n {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..=(n - i) {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}
