//! Adaptive embedded Runge-Kutta integration, generic over the scalar
//! algebra.
//!
//! Dormand-Prince 8(5,3): 8th-order solution with the combined 5th/3rd-order
//! error estimate and the classic step controller. When the state carries
//! Taylor polynomials the error estimate and step control run on the constant
//! parts, so the reference trajectory is controlled to the requested
//! tolerance and the polynomial coefficients ride along.

use crate::dapoly::DaScalar;

use super::DynamicsError;

pub struct RkOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Smallest admissible step magnitude, seconds.
    pub min_step: f64,
    pub max_steps: usize,
}

impl RkOptions {
    pub fn with_tol(rel_tol: f64) -> Self {
        RkOptions {
            rel_tol,
            abs_tol: 1e-12,
            min_step: 1e-3,
            max_steps: 50_000_000,
        }
    }
}

impl Default for RkOptions {
    fn default() -> Self {
        RkOptions::with_tol(1e-10)
    }
}

const S: usize = 12;

const C: [f64; S] = [
    0.0,
    0.0526001519587677318785587544488,
    0.0789002279381515978178381316732,
    0.118350341907227396726757197510,
    0.281649658092772603273242802490,
    1.0 / 3.0,
    0.25,
    0.307692307692307692307692307692,
    0.651282051282051282051282051282,
    0.6,
    0.857142857142857142857142857142,
    1.0,
];

const A: [[f64; 11]; S] = [
    [0.0; 11],
    [
        0.0526001519587677318785587544488,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.0197250569845378994544595329183,
        0.0591751709536136983633785987549,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.0295875854768068491816892993775,
        0.0,
        0.0887627564304205475450678981324,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.241365134159266685502369798665,
        0.0,
        -0.884549479328286085344864962717,
        0.924834003261792003115737966543,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.037037037037037037037037037037,
        0.0,
        0.0,
        0.170828608729473871279604482173,
        0.125467687566822425016691814123,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.037109375,
        0.0,
        0.0,
        0.170252211019544039314978060272,
        0.0602165389804559606850219397283,
        -0.017578125,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.0370920001185047927108779319836,
        0.0,
        0.0,
        0.170383925712239993810214054705,
        0.107262030446373284651809199168,
        -0.0153194377486244017527936158236,
        0.00827378916381402288758473766002,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.624110958716075717114429577812,
        0.0,
        0.0,
        -3.36089262944694129406857109825,
        -0.868219346841726006818189891453,
        27.5920996994467083049415600797,
        20.1540675504778934086186788979,
        -43.4898841810699588477366255144,
        0.0,
        0.0,
        0.0,
    ],
    [
        0.477662536438264365890433908527,
        0.0,
        0.0,
        -2.48811461997166764192642586468,
        -0.590290826836842996371446475743,
        21.2300514481811942347288949897,
        15.2792336328824235832596922938,
        -33.2882109689848629194453265587,
        -0.0203312017085086261358222928593,
        0.0,
        0.0,
    ],
    [
        -0.93714243008598732571704021658,
        0.0,
        0.0,
        5.18637242884406370830023853209,
        1.09143734899672957818500254654,
        -8.14978701074692612513997267357,
        -18.5200656599969598641566180701,
        22.7394870993505042818970056734,
        2.49360555267965238987089396762,
        -3.0467644718982195003823669022,
        0.0,
    ],
    [
        2.27331014751653820792359768449,
        0.0,
        0.0,
        -10.5344954667372501984066689879,
        -2.00087205822486249909675718444,
        -17.9589318631187989172765950534,
        27.9488845294199600508499808837,
        -2.85899827713502369474065508674,
        -8.87285693353062954433549289258,
        12.3605671757943030647266201528,
        0.643392746015763530355970484046,
    ],
];

/// 8th-order weights.
const B: [f64; S] = [
    0.0542937341165687622380535766363,
    0.0,
    0.0,
    0.0,
    0.0,
    4.45031289275240888144113950566,
    1.89151789931450038304281599044,
    -5.8012039600105847814672114227,
    0.311164366957819894408916062370,
    -0.152160949662516078556178806805,
    0.201365400804030348374776537501,
    0.0447106157277725905176885569043,
];

/// 5th-order error weights.
const ER: [f64; S] = [
    0.01312004499419488073250102996,
    0.0,
    0.0,
    0.0,
    0.0,
    -1.225156446376204440720569753,
    -0.4957589496572501915214079952,
    1.664377182454986536961530415,
    -0.3503288487499736816886487290,
    0.3341791187130174790297318841,
    0.08192320648511571246570742613,
    -0.02235530786388629525884427845,
];

/// 3rd-order error companion weights.
const BHH: [f64; 3] = [
    0.244094488188976377952755905512,
    0.733846688281611857341361741547,
    0.0220588235294117647058823529412,
];

fn axpy<T: DaScalar>(y: &[T], h: f64, weights: &[f64], k: &[Vec<T>]) -> Vec<T> {
    let mut out = y.to_vec();
    for (w, ki) in weights.iter().zip(k) {
        if *w == 0.0 {
            continue;
        }
        for (o, kij) in out.iter_mut().zip(ki) {
            *o = o.clone() + kij.clone() * (h * w);
        }
    }
    out
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<T, F>(
    f: &F,
    t0: f64,
    t1: f64,
    y0: &[T],
    opt: &RkOptions,
) -> Result<Vec<T>, DynamicsError>
where
    T: DaScalar,
    F: Fn(f64, &[T]) -> Result<Vec<T>, DynamicsError> + ?Sized,
{
    if t1 == t0 {
        return Ok(y0.to_vec());
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = f(t, &y)?;

    // initial step from the local derivative scale
    let mut h = {
        let scale = |yi: &T| opt.abs_tol + opt.rel_tol * yi.const_part().abs();
        let d0: f64 = y
            .iter()
            .map(|yi| (yi.const_part() / scale(yi)).powi(2))
            .sum::<f64>()
            .sqrt();
        let d1: f64 = y
            .iter()
            .zip(&k1)
            .map(|(yi, ki)| (ki.const_part() / scale(yi)).powi(2))
            .sum::<f64>()
            .sqrt();
        let guess = if d1 > 1e-30 { 0.01 * d0 / d1 } else { 1.0 };
        guess.clamp(opt.min_step.min(span), span) * dir
    };

    let mut steps = 0usize;
    loop {
        if (t - t1) * dir >= 0.0 {
            return Ok(y);
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        steps += 1;
        if steps > opt.max_steps {
            return Err(DynamicsError::MaxStepsExceeded { t });
        }

        let mut k: Vec<Vec<T>> = Vec::with_capacity(S);
        k.push(k1.clone());
        for s in 1..S {
            let ys = axpy(&y, h, &A[s][..s], &k);
            k.push(f(t + C[s] * h, &ys)?);
        }
        let y_new = axpy(&y, h, &B, &k);

        // combined 5th/3rd-order error estimate on the constant parts
        let mut err5 = 0.0;
        let mut err3 = 0.0;
        for i in 0..n {
            let sk = opt.abs_tol
                + opt.rel_tol * y[i].const_part().abs().max(y_new[i].const_part().abs());
            let mut inc8 = 0.0;
            let mut e5 = 0.0;
            for (s, ks) in k.iter().enumerate() {
                let kc = ks[i].const_part();
                if B[s] != 0.0 {
                    inc8 += B[s] * kc;
                }
                if ER[s] != 0.0 {
                    e5 += ER[s] * kc;
                }
            }
            let e3 = inc8
                - BHH[0] * k[0][i].const_part()
                - BHH[1] * k[8][i].const_part()
                - BHH[2] * k[11][i].const_part();
            err5 += (e5 / sk).powi(2);
            err3 += (e3 / sk).powi(2);
        }
        let mut deno = err5 + 0.01 * err3;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err5 * (1.0 / (deno * n as f64)).sqrt();

        if err <= 1.0 {
            t += h;
            y = y_new;
            if (t - t1) * dir >= 0.0 {
                return Ok(y);
            }
            k1 = f(t, &y)?;
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-1.0 / 8.0)).clamp(1.0 / 6.0, 3.0)
        } else {
            3.0
        };
        h *= factor;
        if h.abs() < opt.min_step {
            let remaining = (t1 - t).abs();
            if remaining < opt.min_step {
                h = (t1 - t).signum() * remaining.max(f64::MIN_POSITIVE);
            } else {
                return Err(DynamicsError::StepUnderflow { t, h });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64]| Ok(vec![-y[0]]);
        let y = integrate(&f, 0.0, 5.0, &[1.0], &RkOptions::with_tol(1e-12)).unwrap();
        assert_relative_eq!(y[0], (-5.0f64).exp(), max_relative = 1e-11);
    }

    #[test]
    fn harmonic_oscillator_backward() {
        let f = |_t: f64, y: &[f64]| Ok(vec![y[1], -y[0]]);
        let fwd = integrate(&f, 0.0, 3.0, &[1.0, 0.0], &RkOptions::with_tol(1e-12)).unwrap();
        assert_relative_eq!(fwd[0], 3.0f64.cos(), epsilon = 1e-10);
        let back = integrate(&f, 3.0, 0.0, &fwd, &RkOptions::with_tol(1e-12)).unwrap();
        assert_relative_eq!(back[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(back[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_span_is_identity() {
        let f = |_t: f64, y: &[f64]| Ok(vec![y[0]]);
        let y = integrate(&f, 2.0, 2.0, &[7.0], &RkOptions::default()).unwrap();
        assert_eq!(y[0], 7.0);
    }

    #[test]
    fn eighth_order_convergence() {
        // fixed-tolerance sweep: tightening by 1e2 should improve the global
        // error by far more than a 5th-order method would
        let f = |t: f64, y: &[f64]| Ok(vec![y[0] * t.sin()]);
        let exact = |t: f64| f64::exp(1.0 - t.cos());
        let run = |tol: f64| {
            let y = integrate(&f, 0.0, 10.0, &[1.0], &RkOptions::with_tol(tol)).unwrap();
            (y[0] - exact(10.0)).abs()
        };
        assert!(run(1e-9) < 1e-7);
        assert!(run(1e-12) < 1e-10);
    }
}
