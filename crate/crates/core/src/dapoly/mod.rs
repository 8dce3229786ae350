//! Fixed-order truncated multivariate Taylor-polynomial algebra.
//!
//! A [`TaylorPoly`] carries the Taylor expansion of a quantity with respect to
//! a set of deviation variables ranging over `[-1, 1]^v`. All arithmetic,
//! elementary functions, composition, differentiation and range bounding are
//! truncated at the algebra order. Polynomials are immutable values; every
//! operation returns a fresh polynomial, so they are safe to share across
//! threads.

use std::fmt;
use std::sync::Arc;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

mod series;
mod table;

pub mod scalar;
pub use scalar::DaScalar;

use table::{table_for, MonomialTable, TRUNCATED};

/// Truncation order and variable count shared by all polynomials of one computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct AlgebraSpec {
    /// Truncation order `n >= 1`.
    pub order: u32,
    /// Number of independent deviation variables `v >= 1`.
    pub nvars: u32,
}

impl AlgebraSpec {
    pub fn new(order: u32, nvars: u32) -> Self {
        assert!(
            (1..=6).contains(&order) && (1..=16).contains(&nvars),
            "algebra spec out of supported range: order {order}, nvars {nvars}"
        );
        AlgebraSpec { order, nvars }
    }
}

/// Guaranteed enclosure of a polynomial over the unit domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RangeBound {
    pub lower: f64,
    pub upper: f64,
}

impl RangeBound {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// Closed-interval overlap with an absolute slack.
    pub fn overlaps(&self, other: &RangeBound, slack: f64) -> bool {
        self.lower <= other.upper + slack && other.lower <= self.upper + slack
    }
}

#[derive(Debug, Error)]
pub enum DaError {
    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: u32 },
    #[error("algebra spec mismatch: {lhs:?} vs {rhs:?}")]
    SpecMismatch { lhs: AlgebraSpec, rhs: AlgebraSpec },
    #[error("{func} undefined at expansion point {at}")]
    DomainViolation { func: &'static str, at: f64 },
    #[error("composition expects {expected} arguments, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("evaluation point has length {got}, expected {expected}")]
    PointLength { expected: usize, got: usize },
    #[error("atan2 undefined: both constant parts vanish")]
    Atan2Degenerate,
    #[error("embedding target cannot hold {needed} variables at offset {offset} (order {order} -> {new_order})")]
    EmbedTooSmall {
        needed: u32,
        offset: u32,
        order: u32,
        new_order: u32,
    },
}

/// Truncated multivariate Taylor polynomial over `[-1, 1]^v`.
///
/// Coefficients are stored densely in graded-lexicographic monomial order;
/// the constant part sits at index 0. Coefficients with magnitude below
/// `1e-14 * (1 + |constant|)` are dropped after every operation.
#[derive(Clone)]
pub struct TaylorPoly {
    table: Arc<MonomialTable>,
    coeffs: Vec<f64>,
}

const CLEANUP_REL: f64 = 1e-14;

impl TaylorPoly {
    /// The constant polynomial `c`.
    pub fn constant(spec: AlgebraSpec, c: f64) -> Self {
        let table = table_for(spec);
        let mut coeffs = vec![0.0; table.len()];
        coeffs[0] = c;
        TaylorPoly { table, coeffs }
    }

    pub fn zero(spec: AlgebraSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    /// The affine polynomial `center + scale * dx_index`.
    pub fn variable(
        spec: AlgebraSpec,
        index: usize,
        center: f64,
        scale: f64,
    ) -> Result<Self, DaError> {
        if index >= spec.nvars as usize {
            return Err(DaError::VariableOutOfRange {
                index,
                nvars: spec.nvars,
            });
        }
        let mut p = Self::constant(spec, center);
        let mut exps = vec![0u8; spec.nvars as usize];
        exps[index] = 1;
        let idx = p.table.lookup(&exps).expect("order >= 1") as usize;
        p.coeffs[idx] = scale;
        Ok(p)
    }

    pub fn spec(&self) -> AlgebraSpec {
        self.table.spec
    }

    pub fn order(&self) -> u32 {
        self.table.spec.order
    }

    pub fn nvars(&self) -> usize {
        self.table.spec.nvars as usize
    }

    pub fn const_part(&self) -> f64 {
        self.coeffs[0]
    }

    /// Copy with the constant part replaced.
    pub fn with_const_part(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] = c;
        out
    }

    /// The polynomial minus its constant part.
    pub fn nonconst(&self) -> Self {
        self.with_const_part(0.0)
    }

    /// Coefficient of the first-order monomial in `var`.
    pub fn linear_coeff(&self, var: usize) -> f64 {
        let mut exps = vec![0u8; self.nvars()];
        exps[var] = 1;
        match self.table.lookup(&exps) {
            Some(i) => self.coeffs[i as usize],
            None => 0.0,
        }
    }

    /// Iterator over nonzero `(exponents, coefficient)` terms.
    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (self.table.exps[i].as_slice(), c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// True when only the constant monomial is populated.
    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|&c| c == 0.0)
    }

    /// Largest absolute coefficient, constant part included.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn cleanup(&mut self) {
        // Threshold relative to the polynomial's own scale; anchoring it to
        // the constant part alone turns into an absolute floor for
        // small-magnitude quantities (e.g. 1/a^3 in km units) and silently
        // zeroes meaningful derivatives.
        let thr = CLEANUP_REL * self.max_abs_coeff();
        for c in self.coeffs.iter_mut().skip(1) {
            if c.abs() < thr {
                *c = 0.0;
            }
        }
    }

    fn check_same_spec(&self, rhs: &Self) -> Result<(), DaError> {
        if self.table.spec != rhs.table.spec {
            return Err(DaError::SpecMismatch {
                lhs: self.table.spec,
                rhs: rhs.table.spec,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, rhs: &Self) -> Result<Self, DaError> {
        self.check_same_spec(rhs)?;
        let mut out = self.clone();
        for (o, r) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *o += r;
        }
        out.cleanup();
        Ok(out)
    }

    pub fn checked_sub(&self, rhs: &Self) -> Result<Self, DaError> {
        self.check_same_spec(rhs)?;
        let mut out = self.clone();
        for (o, r) in out.coeffs.iter_mut().zip(&rhs.coeffs) {
            *o -= r;
        }
        out.cleanup();
        Ok(out)
    }

    /// Truncated product: monomials above the algebra order are dropped.
    pub fn checked_mul(&self, rhs: &Self) -> Result<Self, DaError> {
        self.check_same_spec(rhs)?;
        let n = self.table.len();
        let mut coeffs = vec![0.0; n];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in rhs.coeffs.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let k = self.table.product(i, j);
                if k != TRUNCATED {
                    coeffs[k as usize] += a * b;
                }
            }
        }
        let mut out = TaylorPoly {
            table: self.table.clone(),
            coeffs,
        };
        out.cleanup();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c *= s;
        }
        out.cleanup();
        out
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    /// Formal partial derivative with respect to `var`.
    pub fn partial(&self, var: usize) -> Result<Self, DaError> {
        if var >= self.nvars() {
            return Err(DaError::VariableOutOfRange {
                index: var,
                nvars: self.table.spec.nvars,
            });
        }
        let mut coeffs = vec![0.0; self.table.len()];
        let mut exps = vec![0u8; self.nvars()];
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let e = self.table.exps[i][var];
            if e == 0 {
                continue;
            }
            exps.copy_from_slice(&self.table.exps[i]);
            exps[var] = e - 1;
            let k = self.table.lookup(&exps).expect("degree decreases") as usize;
            coeffs[k] += c * e as f64;
        }
        Ok(TaylorPoly {
            table: self.table.clone(),
            coeffs,
        })
    }

    /// Numeric value at a deviation point.
    pub fn eval(&self, point: &[f64]) -> Result<f64, DaError> {
        if point.len() != self.nvars() {
            return Err(DaError::PointLength {
                expected: self.nvars(),
                got: point.len(),
            });
        }
        let mut acc = 0.0;
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mut m = c;
            for (v, &e) in self.table.exps[i].iter().enumerate() {
                for _ in 0..e {
                    m *= point[v];
                }
            }
            acc += m;
        }
        Ok(acc)
    }

    /// Guaranteed enclosure over `[-1, 1]^v`.
    ///
    /// A nonconstant monomial is *even* when every variable exponent is even,
    /// otherwise *odd*. Odd monomials contribute `±|a|`; even ones only widen
    /// the side matching the sign of their coefficient. The result is exact
    /// for first-order polynomials.
    pub fn bound(&self) -> RangeBound {
        let mut lower = self.coeffs[0];
        let mut upper = self.coeffs[0];
        for (i, &c) in self.coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            let even = self.table.exps[i].iter().all(|&e| e % 2 == 0);
            if even {
                if c > 0.0 {
                    upper += c;
                } else {
                    lower += c;
                }
            } else {
                lower -= c.abs();
                upper += c.abs();
            }
        }
        RangeBound { lower, upper }
    }

    /// Substitute `args` for the variables of `self`, truncating at the
    /// output order. Exact when the arguments are affine and total degrees
    /// stay within order.
    pub fn compose(&self, args: &[TaylorPoly]) -> Result<TaylorPoly, DaError> {
        if args.len() != self.nvars() {
            return Err(DaError::ArityMismatch {
                expected: self.nvars(),
                got: args.len(),
            });
        }
        let out_spec = args[0].spec();
        for a in args {
            if a.spec() != out_spec {
                return Err(DaError::SpecMismatch {
                    lhs: out_spec,
                    rhs: a.spec(),
                });
            }
        }
        // Powers of each argument up to the input order, computed lazily.
        let mut powers: Vec<Vec<TaylorPoly>> = args
            .iter()
            .map(|a| vec![TaylorPoly::constant(out_spec, 1.0), a.clone()])
            .collect();
        let mut out = TaylorPoly::zero(out_spec);
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mut term = TaylorPoly::constant(out_spec, c);
            for (v, &e) in self.table.exps[i].iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[v].len() <= e as usize {
                    let next = powers[v].last().unwrap().checked_mul(&args[v])?;
                    powers[v].push(next);
                }
                term = term.checked_mul(&powers[v][e as usize])?;
            }
            out = out.checked_add(&term)?;
        }
        Ok(out)
    }

    /// Replace `dx_var` by `a + b * dx_var`, leaving other variables alone.
    ///
    /// This is the workhorse behind domain splitting and merging; it is much
    /// cheaper than a general composition.
    pub fn substitute_var_affine(&self, var: usize, a: f64, b: f64) -> Result<Self, DaError> {
        if var >= self.nvars() {
            return Err(DaError::VariableOutOfRange {
                index: var,
                nvars: self.table.spec.nvars,
            });
        }
        let mut coeffs = vec![0.0; self.table.len()];
        let mut exps = vec![0u8; self.nvars()];
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let e = self.table.exps[i][var] as usize;
            if e == 0 {
                coeffs[i] += c;
                continue;
            }
            // (a + b dx)^e expanded binomially.
            exps.copy_from_slice(&self.table.exps[i]);
            let mut binom = 1.0;
            for j in 0..=e {
                if j > 0 {
                    binom *= (e - j + 1) as f64 / j as f64;
                }
                let w = c * binom * a.powi((e - j) as i32) * b.powi(j as i32);
                if w == 0.0 {
                    continue;
                }
                exps[var] = j as u8;
                let k = self.table.lookup(&exps).expect("degree non-increasing") as usize;
                coeffs[k] += w;
            }
        }
        let mut out = TaylorPoly {
            table: self.table.clone(),
            coeffs,
        };
        out.cleanup();
        Ok(out)
    }

    /// Keep only the monomials whose exponents satisfy the predicate.
    pub fn retain_terms(&self, keep: impl Fn(&[u8]) -> bool) -> Self {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if *c != 0.0 && !keep(&self.table.exps[i]) {
                *c = 0.0;
            }
        }
        out
    }

    /// Re-key this polynomial into a larger algebra, shifting variables by
    /// `var_offset`. The coefficients are unchanged.
    pub fn embed(&self, new_spec: AlgebraSpec, var_offset: usize) -> Result<Self, DaError> {
        if var_offset + self.nvars() > new_spec.nvars as usize
            || new_spec.order < self.table.spec.order
        {
            return Err(DaError::EmbedTooSmall {
                needed: self.table.spec.nvars,
                offset: var_offset as u32,
                order: self.table.spec.order,
                new_order: new_spec.order,
            });
        }
        let table = table_for(new_spec);
        let mut coeffs = vec![0.0; table.len()];
        let mut exps = vec![0u8; new_spec.nvars as usize];
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            exps.iter_mut().for_each(|e| *e = 0);
            for (v, &e) in self.table.exps[i].iter().enumerate() {
                exps[var_offset + v] = e;
            }
            let k = table.lookup(&exps).expect("order checked") as usize;
            coeffs[k] = c;
        }
        Ok(TaylorPoly { table, coeffs })
    }

    // ----- elementary functions -----

    /// Compose a univariate coefficient sequence with the nonconstant part.
    fn apply_series(&self, series: &[f64]) -> Self {
        let q = self.nonconst();
        let n = self.order() as usize;
        let mut acc = TaylorPoly::constant(self.spec(), series[n]);
        for k in (0..n).rev() {
            acc = acc
                .checked_mul(&q)
                .expect("same spec")
                .add_scalar(series[k]);
        }
        acc
    }

    pub fn exp(&self) -> Self {
        self.apply_series(&series::exp(self.const_part(), self.order() as usize))
    }

    pub fn ln(&self) -> Result<Self, DaError> {
        Ok(self.apply_series(&series::ln(self.const_part(), self.order() as usize)?))
    }

    pub fn sqrt(&self) -> Result<Self, DaError> {
        Ok(self.apply_series(&series::sqrt(self.const_part(), self.order() as usize)?))
    }

    pub fn recip(&self) -> Result<Self, DaError> {
        Ok(self.apply_series(&series::recip(self.const_part(), self.order() as usize)?))
    }

    pub fn sin(&self) -> Self {
        self.apply_series(&series::sin(self.const_part(), self.order() as usize))
    }

    pub fn cos(&self) -> Self {
        self.apply_series(&series::cos(self.const_part(), self.order() as usize))
    }

    pub fn tan(&self) -> Result<Self, DaError> {
        if self.const_part().cos() == 0.0 {
            return Err(DaError::DomainViolation {
                func: "tan",
                at: self.const_part(),
            });
        }
        self.sin().checked_mul(&self.cos().recip()?)
    }

    pub fn asin(&self) -> Result<Self, DaError> {
        Ok(self.apply_series(&series::asin(self.const_part(), self.order() as usize)?))
    }

    pub fn acos(&self) -> Result<Self, DaError> {
        Ok(self.asin()?.scale(-1.0).add_scalar(std::f64::consts::FRAC_PI_2))
    }

    pub fn atan(&self) -> Self {
        self.apply_series(&series::atan(self.const_part(), self.order() as usize))
    }

    /// Four-quadrant arctangent of `self / x`, with the quadrant fixed by the
    /// constant parts. The expansion point must not sit on the origin.
    pub fn atan2(&self, x: &Self) -> Result<Self, DaError> {
        self.check_same_spec(x)?;
        let y0 = self.const_part();
        let x0 = x.const_part();
        if x0 == 0.0 && y0 == 0.0 {
            return Err(DaError::Atan2Degenerate);
        }
        use std::f64::consts::{FRAC_PI_2, PI};
        if x0.abs() >= y0.abs() {
            let base = self.checked_mul(&x.recip()?)?.atan();
            if x0 > 0.0 {
                Ok(base)
            } else if y0 >= 0.0 {
                Ok(base.add_scalar(PI))
            } else {
                Ok(base.add_scalar(-PI))
            }
        } else {
            let base = x.checked_mul(&self.recip()?)?.atan().scale(-1.0);
            if y0 > 0.0 {
                Ok(base.add_scalar(FRAC_PI_2))
            } else {
                Ok(base.add_scalar(-FRAC_PI_2))
            }
        }
    }

    /// Integer power; negative exponents go through the reciprocal.
    pub fn powi(&self, n: i32) -> Result<Self, DaError> {
        if n < 0 {
            return self.recip()?.powi(-n);
        }
        let mut out = TaylorPoly::constant(self.spec(), 1.0);
        let mut base = self.clone();
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                out = out.checked_mul(&base)?;
            }
            k >>= 1;
            if k > 0 {
                base = base.checked_mul(&base)?;
            }
        }
        Ok(out)
    }

    /// Real power around a positive constant part.
    pub fn powf(&self, alpha: f64) -> Result<Self, DaError> {
        Ok(self.apply_series(&series::powf(
            self.const_part(),
            alpha,
            self.order() as usize,
        )?))
    }

    /// Debug JSON of the nonzero terms: `{"order":n,"nvars":v,"terms":[...]}`.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let terms: Vec<serde_json::Value> = self
            .terms()
            .map(|(exps, c)| {
                serde_json::json!({
                    "exp": exps,
                    "coef": c,
                })
            })
            .collect();
        serde_json::json!({
            "order": self.table.spec.order,
            "nvars": self.table.spec.nvars,
            "terms": terms,
        })
    }
}

impl PartialEq for TaylorPoly {
    fn eq(&self, other: &Self) -> bool {
        self.table.spec == other.table.spec && self.coeffs == other.coeffs
    }
}

impl fmt::Debug for TaylorPoly {
    /// Compact form: `5 + 2*x0 - 0.25*x1^2` style.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (exps, c) in self.terms() {
            if first {
                write!(f, "{c}")?;
                first = false;
            } else if c >= 0.0 {
                write!(f, " + {c}")?;
            } else {
                write!(f, " - {}", -c)?;
            }
            for (v, &e) in exps.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{v}")?,
                    _ => write!(f, "*x{v}^{e}")?,
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl Serialize for TaylorPoly {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("order", &self.table.spec.order)?;
        map.serialize_entry("nvars", &self.table.spec.nvars)?;
        let terms: Vec<serde_json::Value> = self
            .terms()
            .map(|(exps, c)| serde_json::json!({"exp": exps, "coef": c}))
            .collect();
        map.serialize_entry("terms", &terms)?;
        map.end()
    }
}

// Operator sugar; panics on spec mismatch like fixed-dimension linear algebra
// does, the checked_* methods report the error instead.
macro_rules! binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl std::ops::$trait for &TaylorPoly {
            type Output = TaylorPoly;
            fn $method(self, rhs: &TaylorPoly) -> TaylorPoly {
                self.$checked(rhs).expect("algebra spec mismatch")
            }
        }
        impl std::ops::$trait for TaylorPoly {
            type Output = TaylorPoly;
            fn $method(self, rhs: TaylorPoly) -> TaylorPoly {
                (&self).$method(&rhs)
            }
        }
        impl std::ops::$trait<&TaylorPoly> for TaylorPoly {
            type Output = TaylorPoly;
            fn $method(self, rhs: &TaylorPoly) -> TaylorPoly {
                (&self).$method(rhs)
            }
        }
    };
}

binop!(Add, add, checked_add);
binop!(Sub, sub, checked_sub);
binop!(Mul, mul, checked_mul);

impl std::ops::Div for TaylorPoly {
    type Output = TaylorPoly;
    fn div(self, rhs: TaylorPoly) -> TaylorPoly {
        self.checked_mul(&rhs.recip().expect("division by polynomial with zero constant part"))
            .expect("algebra spec mismatch")
    }
}

impl std::ops::Neg for TaylorPoly {
    type Output = TaylorPoly;
    fn neg(self) -> TaylorPoly {
        self.scale(-1.0)
    }
}

impl std::ops::Add<f64> for TaylorPoly {
    type Output = TaylorPoly;
    fn add(self, rhs: f64) -> TaylorPoly {
        self.add_scalar(rhs)
    }
}

impl std::ops::Sub<f64> for TaylorPoly {
    type Output = TaylorPoly;
    fn sub(self, rhs: f64) -> TaylorPoly {
        self.add_scalar(-rhs)
    }
}

impl std::ops::Mul<f64> for TaylorPoly {
    type Output = TaylorPoly;
    fn mul(self, rhs: f64) -> TaylorPoly {
        self.scale(rhs)
    }
}

impl std::ops::Div<f64> for TaylorPoly {
    type Output = TaylorPoly;
    fn div(self, rhs: f64) -> TaylorPoly {
        self.scale(1.0 / rhs)
    }
}
