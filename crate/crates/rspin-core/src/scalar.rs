//! Exact coefficient rings.
//!
//! Three rings carry every number in the engine:
//! - [`Rational`]: arbitrary-precision rationals, the ambient field.
//! - [`Scalar`]: elements of Q[L]/(L^(2(r+1)) + r), the quotient ring housing
//!   the rescaling constants (all fractional powers of -r, with sqrt(-r)
//!   defined as L^(r+1)).
//! - [`EpsScalar`]: Laurent polynomials in the dispersion parameter eps with
//!   a tracked validity window — exact below, truncation-aware above.
//!
//! The [`Coeff`] trait is the common interface the series layer is generic
//! over. All values are immutable after construction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Errors from the coefficient rings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScalarError {
    /// Two quotient-ring elements with different r were combined.
    MixedR { left: u32, right: u32 },
    /// Inversion was requested for something other than a nonzero monomial q*L^k.
    NotMonomialUnit,
    /// A Scalar with a nonzero L^k (k > 0) component was read as a rational.
    NotRational,
    /// An eps-exponent below the declared hard floor appeared.
    EpsWindowViolation { exponent: i64, floor: i64 },
    /// An eps-coefficient was read above the truncation boundary.
    TruncatedRead { exponent: i64, valid_up_to: i64 },
}

impl fmt::Display for ScalarError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarError::MixedR { left, right } => {
                write!(f, "mixed quotient rings: r={left} vs r={right}")
            }
            ScalarError::NotMonomialUnit => {
                write!(f, "inversion defined only for nonzero monomials q*L^k")
            }
            ScalarError::NotRational => {
                write!(f, "scalar has a nonzero L^k component, not a rational")
            }
            ScalarError::EpsWindowViolation { exponent, floor } => {
                write!(f, "eps-exponent {exponent} below the hard floor {floor}")
            }
            ScalarError::TruncatedRead { exponent, valid_up_to } => {
                write!(
                    f,
                    "eps-coefficient at {exponent} requested but only exact up to {valid_up_to}"
                )
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for ScalarError {}

/// Arbitrary-precision rational number, always reduced, denominator positive.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    /// num/den, reduced. Panics if den = 0.
    pub fn new(num: i64, den: i64) -> Self {
        Rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_bigint(n: BigInt) -> Self {
        Rational(BigRational::from_integer(n))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Multiplicative inverse. Panics on zero.
    pub fn recip(&self) -> Self {
        assert!(!self.is_zero(), "division by zero rational");
        Rational(self.0.recip())
    }

    /// Integer power, negative allowed (panics on 0^negative).
    pub fn pow(&self, k: i32) -> Self {
        if k < 0 {
            Rational(self.0.recip().pow(-k))
        } else {
            Rational(self.0.pow(k))
        }
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    /// Decimal string of the numerator (sign included).
    pub fn numer_string(&self) -> String {
        self.0.numer().to_string()
    }

    /// Decimal string of the denominator (always positive).
    pub fn denom_string(&self) -> String {
        self.0.denom().to_string()
    }

    /// n! as a rational.
    pub fn factorial(n: u64) -> Self {
        let mut acc = BigInt::one();
        for i in 2..=n {
            acc *= BigInt::from(i);
        }
        Rational::from_bigint(acc)
    }

    /// Integer binomial C(n, k) with C(n, k) = 0 for k < 0 or k > n. Requires n >= 0.
    pub fn binomial(n: i64, k: i64) -> Self {
        assert!(n >= 0, "binomial with negative upper index not needed");
        if k < 0 || k > n {
            return Rational::zero();
        }
        let k = k.min(n - k);
        let mut num = BigInt::one();
        let mut den = BigInt::one();
        for i in 0..k {
            num *= BigInt::from(n - i);
            den *= BigInt::from(i + 1);
        }
        Rational(BigRational::new(num, den))
    }

    /// Generalized binomial C(x, j) = x(x-1)...(x-j+1)/j! for rational x.
    pub fn gen_binomial(x: &Rational, j: u64) -> Self {
        let mut acc = Rational::one();
        for i in 0..j {
            acc = &acc * &(x - &Rational::from_int(i as i64));
        }
        &acc / &Rational::factorial(j)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl<'a, 'b> $trait<&'b Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'b Rational) -> Rational {
                Rational($trait::$method(&self.0, &rhs.0))
            }
        }
        impl $trait<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational($trait::$method(self.0, rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);

impl<'a, 'b> Div<&'b Rational> for &'a Rational {
    type Output = Rational;
    fn div(self, rhs: &'b Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rational(&self.0 / &rhs.0)
    }
}

impl Div<Rational> for Rational {
    type Output = Rational;
    fn div(self, rhs: Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rational(self.0 / rhs.0)
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

/// Element of R_r = Q[L]/(L^(2(r+1)) + r), stored on the basis L^0 .. L^(2r+1).
///
/// L stands for the (2(r+1))-th root of -r; sqrt(-r) is fixed as L^(r+1).
/// The ring is a free Q-module of rank 2(r+1), so equality is exact even
/// though zero divisors may exist; only monomial units are invertible here.
#[derive(Clone, PartialEq, Eq)]
pub struct Scalar {
    r: u32,
    c: Vec<Rational>,
}

impl Scalar {
    fn dim(r: u32) -> usize {
        2 * (r as usize + 1)
    }

    pub fn zero(r: u32) -> Self {
        assert!(r >= 2, "quotient ring needs r >= 2");
        Scalar {
            r,
            c: alloc::vec![Rational::zero(); Self::dim(r)],
        }
    }

    pub fn one(r: u32) -> Self {
        Self::from_rational(r, Rational::one())
    }

    pub fn from_rational(r: u32, q: Rational) -> Self {
        let mut s = Self::zero(r);
        s.c[0] = q;
        s
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    /// Coefficient of L^k, 0 <= k < 2(r+1).
    pub fn coeff(&self, k: usize) -> &Rational {
        &self.c[k]
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(Rational::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.c[0].is_one() && self.c[1..].iter().all(Rational::is_zero)
    }

    /// L^k reduced into the ring; k may be negative (L^-1 = -L^(2r+1)/r).
    pub fn lambda_pow(r: u32, k: i64) -> Self {
        assert!(r >= 2, "quotient ring needs r >= 2");
        let m = 2 * (r as i64 + 1);
        let q = k.div_euclid(m);
        let s = k.rem_euclid(m) as usize;
        // L^(q*m + s) = (-r)^q * L^s.
        let factor = Rational::from_int(-(r as i64)).pow(q as i32);
        let mut out = Self::zero(r);
        out.c[s] = factor;
        out
    }

    /// The fixed square root of -r.
    pub fn sqrt_neg_r(r: u32) -> Self {
        Self::lambda_pow(r, r as i64 + 1)
    }

    pub fn checked_add(&self, rhs: &Scalar) -> Result<Scalar, ScalarError> {
        if self.r != rhs.r {
            return Err(ScalarError::MixedR {
                left: self.r,
                right: rhs.r,
            });
        }
        let c = self
            .c
            .iter()
            .zip(rhs.c.iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Scalar { r: self.r, c })
    }

    pub fn checked_mul(&self, rhs: &Scalar) -> Result<Scalar, ScalarError> {
        if self.r != rhs.r {
            return Err(ScalarError::MixedR {
                left: self.r,
                right: rhs.r,
            });
        }
        let m = Self::dim(self.r);
        let mut out = Self::zero(self.r);
        let neg_r = Rational::from_int(-(self.r as i64));
        for (i, a) in self.c.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.c.iter().enumerate() {
                if b.is_zero() {
                    continue;
                }
                let prod = a * b;
                let k = i + j;
                if k < m {
                    out.c[k] = &out.c[k] + &prod;
                } else {
                    // L^(m + s) = -r * L^s.
                    out.c[k - m] = &out.c[k - m] + &(&prod * &neg_r);
                }
            }
        }
        Ok(out)
    }

    pub fn neg(&self) -> Scalar {
        Scalar {
            r: self.r,
            c: self.c.iter().map(|a| -a).collect(),
        }
    }

    pub fn mul_rational(&self, q: &Rational) -> Scalar {
        Scalar {
            r: self.r,
            c: self.c.iter().map(|a| a * q).collect(),
        }
    }

    /// Inverse of a monomial unit q*L^k; anything else is refused.
    pub fn invert_unit(&self) -> Result<Scalar, ScalarError> {
        let mut nonzero = None;
        for (k, a) in self.c.iter().enumerate() {
            if !a.is_zero() {
                if nonzero.is_some() {
                    return Err(ScalarError::NotMonomialUnit);
                }
                nonzero = Some(k);
            }
        }
        let k = nonzero.ok_or(ScalarError::NotMonomialUnit)?;
        let inv = Self::lambda_pow(self.r, -(k as i64)).mul_rational(&self.c[k].recip());
        Ok(inv)
    }

    /// The L^0 component, provided every other component vanishes.
    pub fn as_rational(&self) -> Result<Rational, ScalarError> {
        if self.c[1..].iter().all(Rational::is_zero) {
            Ok(self.c[0].clone())
        } else {
            Err(ScalarError::NotRational)
        }
    }

    fn assert_same_r(&self, rhs: &Scalar) {
        assert_eq!(
            self.r, rhs.r,
            "mixed quotient rings: r={} vs r={}",
            self.r, rhs.r
        );
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, a) in self.c.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if k == 0 {
                write!(f, "{a}")?;
            } else if a.is_one() {
                write!(f, "L^{k}")?;
            } else {
                write!(f, "{a}*L^{k}")?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar(r={}: {})", self.r, self)
    }
}

impl<'a, 'b> Add<&'b Scalar> for &'a Scalar {
    type Output = Scalar;
    fn add(self, rhs: &'b Scalar) -> Scalar {
        self.assert_same_r(rhs);
        self.checked_add(rhs).unwrap()
    }
}

impl<'a, 'b> Mul<&'b Scalar> for &'a Scalar {
    type Output = Scalar;
    fn mul(self, rhs: &'b Scalar) -> Scalar {
        self.assert_same_r(rhs);
        self.checked_mul(rhs).unwrap()
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar::neg(self)
    }
}

/// Laurent polynomial in eps with a validity window.
///
/// `window_lo` is a hard floor: nonzero content below it signals lost
/// genus-negative information and is an error wherever the hierarchy asserts
/// shapes. `window_hi = Some(h)` records that exponents above h were
/// truncated away (the truncation flag); `None` means the value is exact at
/// every exponent. Reads above the effective boundary are errors, never
/// silent zeros. Equality compares coefficients only — windows are metadata.
#[derive(Clone)]
pub struct EpsScalar {
    window_lo: i64,
    window_hi: Option<i64>,
    coeffs: BTreeMap<i64, Rational>,
}

impl PartialEq for EpsScalar {
    fn eq(&self, other: &Self) -> bool {
        self.coeffs == other.coeffs
    }
}

fn opt_min(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}

impl EpsScalar {
    pub fn zero() -> Self {
        EpsScalar {
            window_lo: 0,
            window_hi: None,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_rational(q: Rational) -> Self {
        Self::monomial(0, q)
    }

    /// q * eps^exp, with the floor set at exp.
    pub fn monomial(exp: i64, q: Rational) -> Self {
        let mut coeffs = BTreeMap::new();
        if !q.is_zero() {
            coeffs.insert(exp, q);
        }
        EpsScalar {
            window_lo: exp,
            window_hi: None,
            coeffs,
        }
    }

    pub fn window_lo(&self) -> i64 {
        self.window_lo
    }

    /// Truncation boundary; None when the value is exact everywhere.
    pub fn window_hi(&self) -> Option<i64> {
        self.window_hi
    }

    pub fn truncated(&self) -> bool {
        self.window_hi.is_some()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn min_exponent(&self) -> Option<i64> {
        self.coeffs.keys().next().copied()
    }

    pub fn max_exponent(&self) -> Option<i64> {
        self.coeffs.keys().next_back().copied()
    }

    /// Coefficient of eps^e; an error above the truncation boundary.
    pub fn coeff(&self, e: i64) -> Result<Rational, ScalarError> {
        if let Some(h) = self.window_hi {
            if e > h {
                return Err(ScalarError::TruncatedRead {
                    exponent: e,
                    valid_up_to: h,
                });
            }
        }
        Ok(self.coeffs.get(&e).cloned().unwrap_or_else(Rational::zero))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&i64, &Rational)> {
        self.coeffs.iter()
    }

    pub fn add(&self, rhs: &EpsScalar) -> EpsScalar {
        let window_hi = opt_min(self.window_hi, rhs.window_hi);
        let mut coeffs = self.coeffs.clone();
        for (&e, q) in &rhs.coeffs {
            let entry = coeffs.entry(e).or_insert_with(Rational::zero);
            *entry = &*entry + q;
        }
        coeffs.retain(|_, q| !q.is_zero());
        if let Some(h) = window_hi {
            coeffs.retain(|&e, _| e <= h);
        }
        EpsScalar {
            window_lo: self.window_lo.min(rhs.window_lo),
            window_hi,
            coeffs,
        }
    }

    pub fn neg(&self) -> EpsScalar {
        EpsScalar {
            window_lo: self.window_lo,
            window_hi: self.window_hi,
            coeffs: self.coeffs.iter().map(|(&e, q)| (e, -q)).collect(),
        }
    }

    pub fn sub(&self, rhs: &EpsScalar) -> EpsScalar {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &EpsScalar) -> EpsScalar {
        if self.is_zero() || rhs.is_zero() {
            // Exact zero regardless of either window.
            let mut z = EpsScalar::zero();
            z.window_lo = self.window_lo + rhs.window_lo;
            return z;
        }
        // Exact up to min over both (truncation boundary + other's lowest content).
        let window_hi = opt_min(
            self.window_hi.map(|h| h + rhs.min_exponent().unwrap()),
            rhs.window_hi.map(|h| h + self.min_exponent().unwrap()),
        );
        let mut coeffs: BTreeMap<i64, Rational> = BTreeMap::new();
        for (&i, a) in &self.coeffs {
            for (&j, b) in &rhs.coeffs {
                let e = i + j;
                if let Some(h) = window_hi {
                    if e > h {
                        continue;
                    }
                }
                let entry = coeffs.entry(e).or_insert_with(Rational::zero);
                *entry = &*entry + &(a * b);
            }
        }
        coeffs.retain(|_, q| !q.is_zero());
        EpsScalar {
            window_lo: self.window_lo + rhs.window_lo,
            window_hi,
            coeffs,
        }
    }

    pub fn mul_rational(&self, q: &Rational) -> EpsScalar {
        if q.is_zero() {
            let mut z = EpsScalar::zero();
            z.window_lo = self.window_lo;
            z.window_hi = self.window_hi;
            return z;
        }
        EpsScalar {
            window_lo: self.window_lo,
            window_hi: self.window_hi,
            coeffs: self.coeffs.iter().map(|(&e, a)| (e, a * q)).collect(),
        }
    }

    /// Multiply by eps^k (shifts window and content).
    pub fn shift(&self, k: i64) -> EpsScalar {
        EpsScalar {
            window_lo: self.window_lo + k,
            window_hi: self.window_hi.map(|h| h + k),
            coeffs: self.coeffs.iter().map(|(&e, q)| (e + k, q.clone())).collect(),
        }
    }

    /// Drop exponents above h and record the truncation.
    pub fn truncate_above(&self, h: i64) -> EpsScalar {
        let window_hi = Some(opt_min(self.window_hi, Some(h)).unwrap());
        let mut coeffs = self.coeffs.clone();
        coeffs.retain(|&e, _| e <= window_hi.unwrap());
        EpsScalar {
            window_lo: self.window_lo,
            window_hi,
            coeffs,
        }
    }

    /// Assert no content below `lo` and tighten the declared floor to it.
    pub fn with_floor(&self, lo: i64) -> Result<EpsScalar, ScalarError> {
        if let Some(min) = self.min_exponent() {
            if min < lo {
                return Err(ScalarError::EpsWindowViolation {
                    exponent: min,
                    floor: lo,
                });
            }
        }
        let mut out = self.clone();
        out.window_lo = lo;
        Ok(out)
    }
}

impl fmt::Display for EpsScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (&e, q) in &self.coeffs {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if e == 0 {
                write!(f, "{q}")?;
            } else if q.is_one() {
                write!(f, "e^{e}")?;
            } else {
                write!(f, "{q}*e^{e}")?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl fmt::Debug for EpsScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EpsScalar[{};{:?}]({})", self.window_lo, self.window_hi, self)
    }
}

/// Common interface of the exact coefficient rings, consumed by the series layer.
pub trait Coeff: Clone + PartialEq + fmt::Debug + fmt::Display {
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    fn is_zero(&self) -> bool;
    fn is_one(&self) -> bool;
    fn add_c(&self, rhs: &Self) -> Self;
    fn neg_c(&self) -> Self;
    fn mul_c(&self, rhs: &Self) -> Self;
    fn mul_rat(&self, q: &Rational) -> Self;
    fn sub_c(&self, rhs: &Self) -> Self {
        self.add_c(&rhs.neg_c())
    }
    /// True when the Display form is a sum needing parentheses inside a product.
    fn is_compound(&self) -> bool;
}

impl Coeff for Rational {
    fn zero_like(&self) -> Self {
        Rational::zero()
    }
    fn one_like(&self) -> Self {
        Rational::one()
    }
    fn is_zero(&self) -> bool {
        Rational::is_zero(self)
    }
    fn is_one(&self) -> bool {
        Rational::is_one(self)
    }
    fn add_c(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn neg_c(&self) -> Self {
        -self
    }
    fn mul_c(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn mul_rat(&self, q: &Rational) -> Self {
        self * q
    }
    fn is_compound(&self) -> bool {
        false
    }
}

impl Coeff for Scalar {
    fn zero_like(&self) -> Self {
        Scalar::zero(self.r)
    }
    fn one_like(&self) -> Self {
        Scalar::one(self.r)
    }
    fn is_zero(&self) -> bool {
        Scalar::is_zero(self)
    }
    fn is_one(&self) -> bool {
        Scalar::is_one(self)
    }
    fn add_c(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn neg_c(&self) -> Self {
        Scalar::neg(self)
    }
    fn mul_c(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn mul_rat(&self, q: &Rational) -> Self {
        self.mul_rational(q)
    }
    fn is_compound(&self) -> bool {
        self.c.iter().filter(|a| !a.is_zero()).count() > 1
    }
}

impl Coeff for EpsScalar {
    fn zero_like(&self) -> Self {
        EpsScalar::zero()
    }
    fn one_like(&self) -> Self {
        EpsScalar::from_rational(Rational::one())
    }
    fn is_zero(&self) -> bool {
        EpsScalar::is_zero(self)
    }
    fn is_one(&self) -> bool {
        self.coeffs.len() == 1 && self.coeff(0).map(|q| q.is_one()).unwrap_or(false)
    }
    fn add_c(&self, rhs: &Self) -> Self {
        self.add(rhs)
    }
    fn neg_c(&self) -> Self {
        self.neg()
    }
    fn mul_c(&self, rhs: &Self) -> Self {
        self.mul(rhs)
    }
    fn mul_rat(&self, q: &Rational) -> Self {
        self.mul_rational(q)
    }
    fn is_compound(&self) -> bool {
        self.coeffs.len() > 1
    }
}
