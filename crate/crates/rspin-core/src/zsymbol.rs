//! Commutative Laurent symbols in z over truncated series — the
//! dispersionless operator algebra.
//!
//! A [`ZSymbol`] stores finitely many z-coefficients together with a
//! `low` bound: exponents at or above `low` are exactly known, anything
//! below is unknown territory (fractional powers have infinite tails).
//! Reading below the bound is an error, never a silent zero. Symbols that
//! are genuine Laurent polynomials (the Lax symbol itself, its plus-parts)
//! carry the sentinel [`NEG_INF`] meaning "exact everywhere".
//!
//! Products tighten the bound to max(a.low + top(b), b.low + top(a)):
//! below that, unknown tails could have contributed.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;

use crate::scalar::Rational;
use crate::series::{Mono, SeriesError, TSeries, VarSpace};

/// Sentinel low bound for symbols that are exact at every exponent.
pub const NEG_INF: i64 = i64::MIN / 4;

/// Errors from symbol algebra.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ZError {
    /// Fractional powers need a monic symbol of positive integer top degree.
    NotMonic,
    /// The requested depth cannot be certified by the inputs' valid ranges.
    DepthUnreachable { needed: i64, valid: i64 },
    /// A coefficient below the guaranteed-valid bound was requested.
    BelowValidRange { requested: i64, low: i64 },
    Series(SeriesError),
}

impl fmt::Display for ZError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZError::NotMonic => write!(f, "symbol is not monic of positive top degree"),
            ZError::DepthUnreachable { needed, valid } => {
                write!(f, "depth {needed} requested but inputs only certify {valid}")
            }
            ZError::BelowValidRange { requested, low } => {
                write!(f, "z-exponent {requested} is below the valid bound {low}")
            }
            ZError::Series(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for ZError {}

impl From<SeriesError> for ZError {
    fn from(e: SeriesError) -> Self {
        ZError::Series(e)
    }
}

/// Laurent series in z with TSeries coefficients and a tracked valid bound.
#[derive(Clone, PartialEq)]
pub struct ZSymbol {
    low: i64,
    coeffs: BTreeMap<i64, TSeries<Rational>>,
    proto: TSeries<Rational>,
}

impl ZSymbol {
    /// The zero symbol, exact everywhere.
    pub fn zero(space: VarSpace, cap: u32) -> Self {
        ZSymbol {
            low: NEG_INF,
            coeffs: BTreeMap::new(),
            proto: TSeries::zero(space, cap, Rational::one()),
        }
    }

    /// series * z^k.
    pub fn from_series(k: i64, series: TSeries<Rational>) -> Self {
        let proto = TSeries::zero(*series.space(), series.cap(), Rational::one());
        let mut coeffs = BTreeMap::new();
        if !series.is_zero() {
            coeffs.insert(k, series);
        }
        ZSymbol { low: NEG_INF, coeffs, proto }
    }

    /// z^k with coefficient 1.
    pub fn z_pow(space: VarSpace, cap: u32, k: i64) -> Self {
        Self::from_series(k, TSeries::one(space, cap, Rational::one()))
    }

    /// Add (or accumulate into) one coefficient; building block for jets.
    pub fn add_term(&mut self, k: i64, series: &TSeries<Rational>) {
        if series.is_zero() {
            return;
        }
        match self.coeffs.get_mut(&k) {
            Some(existing) => {
                let sum = &*existing + series;
                if sum.is_zero() {
                    self.coeffs.remove(&k);
                } else {
                    *existing = sum;
                }
            }
            None => {
                self.coeffs.insert(k, series.clone());
            }
        }
    }

    /// Declare a (shallower or equal) valid bound, dropping anything below.
    pub fn with_low(mut self, low: i64) -> Self {
        self.low = self.low.max(low);
        let l = self.low;
        self.coeffs.retain(|&k, _| k >= l);
        self
    }

    pub fn low(&self) -> i64 {
        self.low
    }

    pub fn space(&self) -> &VarSpace {
        self.proto.space()
    }

    pub fn cap(&self) -> u32 {
        self.proto.cap()
    }

    /// Largest exponent with a stored (nonzero) coefficient.
    pub fn top(&self) -> Option<i64> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&i64, &TSeries<Rational>)> {
        self.coeffs.iter()
    }

    /// Coefficient of z^k; an error below the valid bound.
    pub fn coeff(&self, k: i64) -> Result<&TSeries<Rational>, ZError> {
        if k < self.low {
            return Err(ZError::BelowValidRange { requested: k, low: self.low });
        }
        Ok(self.coeffs.get(&k).unwrap_or(&self.proto))
    }

    fn assert_same_space(&self, rhs: &Self) {
        assert_eq!(self.proto.space(), rhs.proto.space(), "symbol space mismatch");
        assert_eq!(self.proto.cap(), rhs.proto.cap(), "symbol cap mismatch");
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.assert_same_space(rhs);
        let low = self.low.max(rhs.low);
        let mut out = ZSymbol {
            low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, s) in self.coeffs.iter().chain(rhs.coeffs.iter()) {
            if k >= low {
                out.add_term(k, s);
            }
        }
        out
    }

    pub fn neg(&self) -> Self {
        ZSymbol {
            low: self.low,
            coeffs: self.coeffs.iter().map(|(&k, s)| (k, s.neg())).collect(),
            proto: self.proto.clone(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    pub fn scale_rat(&self, q: &Rational) -> Self {
        if q.is_zero() {
            let mut z = Self::zero(*self.space(), self.cap());
            z.low = self.low;
            return z;
        }
        ZSymbol {
            low: self.low,
            coeffs: self.coeffs.iter().map(|(&k, s)| (k, s.scale_rat(q))).collect(),
            proto: self.proto.clone(),
        }
    }

    pub fn scale_series(&self, s: &TSeries<Rational>) -> Self {
        let mut out = ZSymbol {
            low: self.low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, c) in &self.coeffs {
            out.add_term(k, &(c * s));
        }
        out
    }

    /// Multiply by z^k.
    pub fn shift_z(&self, k: i64) -> Self {
        ZSymbol {
            low: if self.low == NEG_INF { NEG_INF } else { self.low + k },
            coeffs: self.coeffs.iter().map(|(&e, s)| (e + k, s.clone())).collect(),
            proto: self.proto.clone(),
        }
    }

    /// Commutative product; the valid bound tightens as documented on the type.
    pub fn mul(&self, rhs: &Self) -> Self {
        self.assert_same_space(rhs);
        let bound = |alow: i64, btop: Option<i64>, bempty_low: i64| -> i64 {
            if alow == NEG_INF {
                return NEG_INF;
            }
            match btop {
                Some(t) => alow.saturating_add(t),
                // Partner has no stored content: only its own unknown tail
                // can pair with our unknown tail.
                None => alow.saturating_add(bempty_low),
            }
        };
        let low = bound(self.low, rhs.top(), rhs.low)
            .max(bound(rhs.low, self.top(), self.low))
            .max(NEG_INF);
        let mut out = ZSymbol {
            low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&i, a) in &self.coeffs {
            for (&j, b) in &rhs.coeffs {
                let k = i + j;
                if k < low {
                    continue;
                }
                out.add_term(k, &(a * b));
            }
        }
        out
    }

    /// Non-negative and negative degree parts; plus + minus = self.
    /// Requires the bound to reach at least 0 so the plus-part is complete.
    pub fn split(&self) -> (Self, Self) {
        assert!(self.low <= 0, "split needs validity down to z^0");
        let mut plus = Self::zero(*self.space(), self.cap());
        let mut minus = ZSymbol {
            low: self.low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, s) in &self.coeffs {
            if k >= 0 {
                plus.coeffs.insert(k, s.clone());
            } else {
                minus.coeffs.insert(k, s.clone());
            }
        }
        (plus, minus)
    }

    /// Coefficient of z^-1.
    pub fn residue(&self) -> Result<TSeries<Rational>, ZError> {
        if self.low > -1 {
            return Err(ZError::BelowValidRange { requested: -1, low: self.low });
        }
        Ok(self.coeffs.get(&-1).cloned().unwrap_or_else(|| self.proto.clone()))
    }

    /// d/dz: k z^(k-1) per term.
    pub fn derivative_z(&self) -> Self {
        let mut out = ZSymbol {
            low: if self.low == NEG_INF { NEG_INF } else { self.low - 1 },
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, s) in &self.coeffs {
            if k == 0 {
                continue;
            }
            out.add_term(k - 1, &s.scale_rat(&Rational::from_int(k)));
        }
        out
    }

    /// Coefficientwise d/d(var); var is the slot of x = T_1 in flow usage.
    pub fn derivative_x(&self, var: usize) -> Self {
        let mut out = ZSymbol {
            low: self.low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, s) in &self.coeffs {
            out.add_term(k, &s.derivative(var).expect("valid slot"));
        }
        out
    }

    /// Poisson bracket {a, b} = dz(a)·dx(b) − dx(a)·dz(b), the biderivation
    /// extension of {z, f} = dx f on generators. `xvar` is the slot of T_1.
    pub fn poisson(&self, rhs: &Self, xvar: usize) -> Self {
        let term1 = self.derivative_z().mul(&rhs.derivative_x(xvar));
        let term2 = self.derivative_x(xvar).mul(&rhs.derivative_z());
        term1.sub(&term2)
    }

    /// The unique symbol z^n (1+u)^(n/r) with u = (self − z^r) z^(−r),
    /// coefficients valid down to z^depth; requires self monic of top
    /// degree r >= 1 (top coefficient exactly 1).
    pub fn fractional_power(&self, n: i64, depth: i64) -> Result<Self, ZError> {
        let r = match self.top() {
            Some(t) if t >= 1 => t,
            _ => return Err(ZError::NotMonic),
        };
        let top_ok = self
            .coeff(r)
            .map(|s| {
                s.len() == 1
                    && s.coefficient(&Mono::unit(self.space().count()))
                        .map(|c| c.is_one())
                        .unwrap_or(false)
            })
            .unwrap_or(false);
        if !top_ok {
            return Err(ZError::NotMonic);
        }
        let powers = self.binomial_tail_powers(r, depth - n, (n - depth).max(0) as u32)?;
        let exponent = Rational::new(n, r);
        let mut acc = Self::zero(*self.space(), self.cap());
        for (j, upow) in powers.iter().enumerate() {
            acc = acc.add(&upow.scale_rat(&Rational::gen_binomial(&exponent, j as u64)));
        }
        let out = acc.shift_z(n);
        if out.low > depth {
            return Err(ZError::DepthUnreachable { needed: depth, valid: out.low });
        }
        Ok(out.with_low(depth))
    }

    /// Powers u^0..u^jmax of u = (self − z^r) z^(−r), each truncated below
    /// `keep`; shared by fractional powers at fixed base.
    fn binomial_tail_powers(
        &self,
        r: i64,
        keep: i64,
        jmax: u32,
    ) -> Result<alloc::vec::Vec<Self>, ZError> {
        let mut u = self.clone();
        u.coeffs.remove(&r);
        let u = u.shift_z(-r);
        debug_assert!(u.top().map(|t| t < 0).unwrap_or(true));
        let one = Self::z_pow(*self.space(), self.cap(), 0);
        let mut powers = alloc::vec![one];
        for _ in 0..jmax {
            let next = powers.last().unwrap().mul(&u).with_low(keep);
            powers.push(next);
        }
        Ok(powers)
    }
}

impl fmt::Display for ZSymbol {
    /// Canonical text: descending powers of z, coefficient series inline
    /// (parenthesized when they are sums attached to z^k).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (&k, s) in self.coeffs.iter().rev() {
            let part = if k == 0 {
                alloc::format!("{s}")
            } else {
                let z = if k == 1 {
                    String::from("z")
                } else {
                    alloc::format!("z^{k}")
                };
                if s.len() == 1 {
                    let body = alloc::format!("{s}");
                    if body == "1" {
                        z
                    } else {
                        alloc::format!("{body}*{z}")
                    }
                } else {
                    alloc::format!("({s})*{z}")
                }
            };
            if first {
                write!(f, "{part}")?;
                first = false;
            } else if let Some(rest) = part.strip_prefix('-') {
                write!(f, " - {rest}")?;
            } else {
                write!(f, " + {part}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for ZSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ZSymbol[low {}]({})", self.low, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::VarSpace;

    fn t1(space: VarSpace, cap: u32) -> TSeries<Rational> {
        TSeries::var(space, cap, Rational::one(), 0)
    }

    #[test]
    fn product_of_laurent_polynomials() {
        let sp = VarSpace::big_t(2, 1);
        let cap = 4;
        // (z + T1 z^-1)(z − T1 z^-1) = z^2 − T1^2 z^-2.
        let mut a = ZSymbol::z_pow(sp, cap, 1);
        a.add_term(-1, &t1(sp, cap));
        let mut b = ZSymbol::z_pow(sp, cap, 1);
        b.add_term(-1, &t1(sp, cap).neg());
        let p = a.mul(&b);
        assert_eq!(alloc::format!("{p}"), "z^2 - T1^2*z^-2");

        // a * 1 = a.
        let one = ZSymbol::z_pow(sp, cap, 0);
        assert_eq!(a.mul(&one), a);

        // (z + T1 z^-1)^2 = z^2 + 2 T1 + T1^2 z^-2.
        let sq = a.mul(&a);
        assert_eq!(alloc::format!("{sq}"), "z^2 + 2*T1 + T1^2*z^-2");
    }

    #[test]
    fn split_and_residue() {
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        let mut a = ZSymbol::z_pow(sp, cap, 1);
        a.add_term(-1, &t1(sp, cap));
        assert_eq!(alloc::format!("{}", a.residue().unwrap()), "T1");

        let z2 = ZSymbol::z_pow(sp, cap, 2);
        let (plus, minus) = z2.split();
        assert_eq!(plus, z2);
        assert!(minus.is_zero());
        assert!(z2.residue().unwrap().is_zero());

        let tail = ZSymbol::from_series(-1, t1(sp, cap));
        let (plus, minus) = tail.split();
        assert!(plus.is_zero());
        assert_eq!(minus, tail);

        // Reading below a declared bound errors.
        let shallow = a.clone().with_low(0);
        assert_eq!(
            shallow.residue(),
            Err(ZError::BelowValidRange { requested: -1, low: 0 })
        );
    }

    #[test]
    fn square_root_of_kdv_symbol() {
        // (z^2 + 2T1)^(1/2) = z + T1 z^-1 - (1/2) T1^2 z^-3 + (1/2) T1^3 z^-5 ...
        let sp = VarSpace::big_t(2, 1);
        let cap = 3;
        let mut l = ZSymbol::z_pow(sp, cap, 2);
        l.add_term(0, &t1(sp, cap).scale_rat(&Rational::from_int(2)));
        let root = l.fractional_power(1, -5).unwrap();
        assert_eq!(alloc::format!("{}", root.coeff(1).unwrap()), "1");
        assert_eq!(alloc::format!("{}", root.coeff(-1).unwrap()), "T1");
        assert_eq!(alloc::format!("{}", root.coeff(-3).unwrap()), "-1/2*T1^2");
        assert_eq!(alloc::format!("{}", root.coeff(-5).unwrap()), "1/2*T1^3");
        assert!(root.coeff(0).unwrap().is_zero());

        // Squaring recovers the input on the certified range.
        let sq = root.mul(&root);
        assert!(sq.low() <= -2);
        assert_eq!(sq.coeff(2).unwrap(), l.coeff(2).unwrap());
        assert_eq!(sq.coeff(0).unwrap(), l.coeff(0).unwrap());
        assert!(sq.coeff(-1).unwrap().is_zero());
        assert!(sq.coeff(-2).unwrap().is_zero());

        // Integer exponent returns the symbol itself.
        let same = l.fractional_power(2, -3).unwrap();
        assert_eq!(same.coeff(2).unwrap(), l.coeff(2).unwrap());
        assert_eq!(same.coeff(0).unwrap(), l.coeff(0).unwrap());
        assert!(same.coeff(-1).unwrap().is_zero());
    }

    #[test]
    fn generic_three_halves_power() {
        // Over the f-indeterminate space, (z^2 + f0)^(3/2):
        // plus-part z^3 + (3/2) f0 z, residue (3/8) f0^2.
        let sp = VarSpace::f_vars(2);
        let cap = 4;
        let f0 = TSeries::var(sp, cap, Rational::one(), 0);
        let mut l = ZSymbol::z_pow(sp, cap, 2);
        l.add_term(0, &f0);
        let p = l.fractional_power(3, -6).unwrap();
        let (plus, _) = p.split();
        assert_eq!(alloc::format!("{plus}"), "z^3 + 3/2*f0*z");
        assert_eq!(alloc::format!("{}", p.residue().unwrap()), "3/8*f0^2");
    }

    #[test]
    fn poisson_brackets() {
        let sp = VarSpace::big_t(3, 1);
        let cap = 4;
        // {z, T1} = 1.
        let z = ZSymbol::z_pow(sp, cap, 1);
        let t = ZSymbol::from_series(0, t1(sp, cap));
        let b = z.poisson(&t, 0);
        assert_eq!(alloc::format!("{b}"), "1");

        // Coefficient-free symbols commute: {z^2, z^3} = 0.
        let b2 = ZSymbol::z_pow(sp, cap, 2).poisson(&ZSymbol::z_pow(sp, cap, 3), 0);
        assert!(b2.is_zero());

        // {z^(r-1), z^r + r x} = r(r-1) z^(r-2) for r=3.
        let mut l = ZSymbol::z_pow(sp, cap, 3);
        l.add_term(0, &t1(sp, cap).scale_rat(&Rational::from_int(3)));
        let zr1 = ZSymbol::z_pow(sp, cap, 2);
        let br = zr1.poisson(&l, 0);
        assert_eq!(alloc::format!("{br}"), "6*z");
    }

    #[test]
    fn kdv_flow_bracket() {
        // r=2 with f0 = 2T1 + 6T1T3: {(L^(3/2))+, L} = (3/2) f0 dx(f0).
        let sp = VarSpace::big_t(2, 3);
        let cap = 3;
        let f0 = &t1(sp, cap).scale_rat(&Rational::from_int(2))
            + &(&t1(sp, cap) * &TSeries::var(sp, cap, Rational::one(), 2))
                .scale_rat(&Rational::from_int(6));
        let mut l = ZSymbol::z_pow(sp, cap, 2);
        l.add_term(0, &f0);
        let p32 = l.fractional_power(3, -4).unwrap();
        let (plus, _) = p32.split();
        let bracket = plus.poisson(&l, 0);
        let expect = &f0.scale_rat(&Rational::new(3, 2)) * &f0.derivative(0).unwrap();
        assert_eq!(bracket.top(), Some(0));
        assert_eq!(bracket.coeff(0).unwrap(), &expect);
        assert!(bracket.coeff(1).unwrap().is_zero());
        assert!(bracket.coeff(2).unwrap().is_zero());
    }
}
