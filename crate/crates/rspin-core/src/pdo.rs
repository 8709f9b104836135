//! Pseudodifferential operators in Dx over truncated series with Laurent
//! eps-coefficients — the dispersive operator algebra.
//!
//! A [`PDOp`] is a finite sum of coefficient-series times integer powers of
//! Dx (negative powers allowed), with the same `low` valid-bound discipline
//! as the commutative symbols: exponents at or above `low` are exact,
//! anything below is unreported tail. Composition uses
//! Dx^k . f = sum_l C(k, l) (dx^l f) Dx^(k-l); for negative k the sum is
//! finite anyway because repeated x-derivatives exhaust the degree cap.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::scalar::{EpsScalar, Rational};
use crate::series::{Mono, TSeries, VarSpace};
use crate::zsymbol::{ZError, NEG_INF};

/// Operator-valued Laurent polynomial in Dx with tracked valid bound.
#[derive(Clone, PartialEq)]
pub struct PDOp {
    low: i64,
    coeffs: BTreeMap<i64, TSeries<EpsScalar>>,
    proto: TSeries<EpsScalar>,
}

impl PDOp {
    /// The zero operator, exact everywhere.
    pub fn zero(space: VarSpace, cap: u32) -> Self {
        PDOp {
            low: NEG_INF,
            coeffs: BTreeMap::new(),
            proto: TSeries::zero(space, cap, EpsScalar::from_rational(Rational::one())),
        }
    }

    /// series * Dx^k.
    pub fn from_series(k: i64, series: TSeries<EpsScalar>) -> Self {
        let proto = TSeries::zero(
            *series.space(),
            series.cap(),
            EpsScalar::from_rational(Rational::one()),
        );
        let mut coeffs = BTreeMap::new();
        if !series.is_zero() {
            coeffs.insert(k, series);
        }
        PDOp { low: NEG_INF, coeffs, proto }
    }

    /// Dx^k with coefficient 1.
    pub fn dx_pow(space: VarSpace, cap: u32, k: i64) -> Self {
        let one = TSeries::one(space, cap, EpsScalar::from_rational(Rational::one()));
        Self::from_series(k, one)
    }

    /// Add (or accumulate into) one Dx-coefficient.
    pub fn add_term(&mut self, k: i64, series: &TSeries<EpsScalar>) {
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

    /// Largest Dx-power with a stored (nonzero) coefficient.
    pub fn top(&self) -> Option<i64> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&i64, &TSeries<EpsScalar>)> {
        self.coeffs.iter()
    }

    /// Coefficient of Dx^k; an error below the valid bound.
    pub fn coeff(&self, k: i64) -> Result<&TSeries<EpsScalar>, ZError> {
        if k < self.low {
            return Err(ZError::BelowValidRange { requested: k, low: self.low });
        }
        Ok(self.coeffs.get(&k).unwrap_or(&self.proto))
    }

    fn assert_same_space(&self, rhs: &Self) {
        assert_eq!(self.proto.space(), rhs.proto.space(), "operator space mismatch");
        assert_eq!(self.proto.cap(), rhs.proto.cap(), "operator cap mismatch");
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.assert_same_space(rhs);
        let low = self.low.max(rhs.low);
        let mut out = PDOp {
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
        PDOp {
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
        PDOp {
            low: self.low,
            coeffs: self.coeffs.iter().map(|(&k, s)| (k, s.scale_rat(q))).collect(),
            proto: self.proto.clone(),
        }
    }

    pub fn scale_eps(&self, c: &EpsScalar) -> Self {
        let mut out = PDOp {
            low: self.low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, s) in &self.coeffs {
            out.add_term(k, &s.scale(c));
        }
        out
    }

    /// Operator composition self . rhs; `xvar` is the slot of x = T_1.
    pub fn compose(&self, rhs: &Self, xvar: usize) -> Self {
        self.compose_trunc(rhs, xvar, NEG_INF)
    }

    /// Composition keeping only Dx-powers >= keep (valid bound recorded).
    pub fn compose_trunc(&self, rhs: &Self, xvar: usize, keep: i64) -> Self {
        self.assert_same_space(rhs);
        let bound = |alow: i64, btop: Option<i64>, bempty_low: i64| -> i64 {
            if alow == NEG_INF {
                return NEG_INF;
            }
            match btop {
                Some(t) => alow.saturating_add(t),
                None => alow.saturating_add(bempty_low),
            }
        };
        let low = bound(self.low, rhs.top(), rhs.low)
            .max(bound(rhs.low, self.top(), self.low))
            .max(keep)
            .max(NEG_INF);
        let mut out = PDOp {
            low,
            coeffs: BTreeMap::new(),
            proto: self.proto.clone(),
        };
        for (&k, a) in &self.coeffs {
            for (&m, b) in &rhs.coeffs {
                // Dx^k . b = sum_l C(k,l) (dx^l b) Dx^(k-l); a multiplies on
                // the left. The sum stops when derivatives kill b or the
                // term falls below the kept range.
                let mut db = b.clone();
                let mut l: i64 = 0;
                loop {
                    if k >= 0 && l > k {
                        break;
                    }
                    if db.is_zero() || k + m - l < low {
                        break;
                    }
                    let factor = Rational::gen_binomial(&Rational::from_int(k), l as u64);
                    if !factor.is_zero() {
                        let term = &(a * &db).scale_rat(&factor);
                        out.add_term(k + m - l, term);
                    }
                    db = db.derivative(xvar).expect("valid x slot");
                    l += 1;
                }
            }
        }
        out
    }

    /// self^n by repeated composition, keeping Dx-powers >= keep.
    pub fn pow_trunc(&self, n: u32, xvar: usize, keep: i64) -> Self {
        let mut acc = Self::dx_pow(*self.space(), self.cap(), 0);
        for _ in 0..n {
            acc = acc.compose_trunc(self, xvar, keep);
        }
        acc
    }

    /// [self, rhs] = self.rhs − rhs.self.
    pub fn commutator(&self, rhs: &Self, xvar: usize) -> Self {
        self.compose(rhs, xvar).sub(&rhs.compose(self, xvar))
    }

    /// Non-negative and negative Dx-degree parts; plus + minus = self.
    pub fn split(&self) -> (Self, Self) {
        assert!(self.low <= 0, "split needs validity down to Dx^0");
        let mut plus = Self::zero(*self.space(), self.cap());
        let mut minus = PDOp {
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

    /// Coefficient of Dx^-1.
    pub fn project_residue(&self) -> Result<TSeries<EpsScalar>, ZError> {
        if self.low > -1 {
            return Err(ZError::BelowValidRange { requested: -1, low: self.low });
        }
        Ok(self.coeffs.get(&-1).cloned().unwrap_or_else(|| self.proto.clone()))
    }

    /// The unique monic root R with R^r = self and R = Dx + (orders <= 0),
    /// coefficients valid down to Dx^depth. Requires self monic of top
    /// degree r >= 1. Each new coefficient at Dx^(-n) is pinned by the
    /// defect of R^r at Dx^(r-1-n), which it enters linearly with factor r.
    pub fn rth_root(&self, depth: i64, xvar: usize) -> Result<Self, ZError> {
        let r = match self.top() {
            Some(t) if t >= 1 => t,
            _ => return Err(ZError::NotMonic),
        };
        let top_ok = self
            .coeff(r)
            .map(|s| {
                s.len() == 1
                    && s.coefficient(&Mono::unit(self.space().count()))
                        .map(|c| crate::scalar::Coeff::is_one(&c))
                        .unwrap_or(false)
            })
            .unwrap_or(false);
        if !top_ok {
            return Err(ZError::NotMonic);
        }
        let rinv = Rational::new(1, r);
        let mut root = Self::dx_pow(*self.space(), self.cap(), 1);
        for n in 0..=(-depth).max(0) {
            let pw = root.pow_trunc(r as u32, xvar, depth);
            let at = r - 1 - n;
            let defect = self.coeff(at)? - pw.coeff(at)?;
            if !defect.is_zero() {
                root.add_term(-n, &defect.scale_rat(&rinv));
            }
        }
        Ok(root.with_low(depth))
    }
}

impl fmt::Display for PDOp {
    /// Canonical text: descending powers of Dx, coefficient series inline
    /// (parenthesized when they are sums attached to Dx^k).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (&k, s) in self.coeffs.iter().rev() {
            let part = if k == 0 {
                alloc::format!("{s}")
            } else {
                let d = if k == 1 {
                    String::from("Dx")
                } else {
                    alloc::format!("Dx^{k}")
                };
                if s.len() == 1 {
                    let body = alloc::format!("{s}");
                    if body == "1" {
                        d
                    } else {
                        alloc::format!("{body}*{d}")
                    }
                } else {
                    alloc::format!("({s})*{d}")
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

impl fmt::Debug for PDOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PDOp[low {}]({})", self.low, self)
    }
}

/// Powers of Dx applied to exp(theta), divided by exp(theta): the universal
/// polynomial in dx theta, dx^2 theta, ... of the complete Bell type.
/// Entry j of the result is the j-th x-derivative of theta on the given
/// variable slot; callers substitute their own theta.
pub fn bell_exponential(theta: &TSeries<EpsScalar>, xvar: usize, kmax: u32) -> Vec<TSeries<EpsScalar>> {
    // B_0 = 1; B_{k+1} = (dx + dx theta) B_k, the standard recurrence for
    // dx^k e^theta = B_k e^theta.
    let one = TSeries::one(
        *theta.space(),
        theta.cap(),
        EpsScalar::from_rational(Rational::one()),
    );
    let dtheta = theta.derivative(xvar).expect("valid x slot");
    let mut out = alloc::vec![one];
    for _ in 0..kmax {
        let prev = out.last().unwrap();
        let next = &prev.derivative(xvar).expect("valid x slot") + &(prev * &dtheta);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_eps() -> EpsScalar {
        EpsScalar::from_rational(Rational::one())
    }

    fn t_var(space: VarSpace, cap: u32, slot: usize) -> TSeries<EpsScalar> {
        TSeries::var(space, cap, one_eps(), slot)
    }

    #[test]
    fn leibniz_composition() {
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        // Dx . T1^2 = T1^2 Dx + 2 T1.
        let f = &t_var(sp, cap, 0) * &t_var(sp, cap, 0);
        let a = PDOp::dx_pow(sp, cap, 1);
        let b = PDOp::from_series(0, f.clone());
        let c = a.compose(&b, 0);
        assert_eq!(c.coeff(1).unwrap(), &f);
        assert_eq!(
            alloc::format!("{}", c.coeff(0).unwrap()),
            "2*T1"
        );
        assert!(c.coeff(2).unwrap().is_zero());
    }

    #[test]
    fn inverse_dx_pushes_past_functions() {
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        // Dx^-1 . f = f Dx^-1 − (dx f) Dx^-2 + (dx^2 f) Dx^-3 − ... for f = T1^2.
        let f = &t_var(sp, cap, 0) * &t_var(sp, cap, 0);
        let inv = PDOp::dx_pow(sp, cap, -1);
        let c = inv.compose(&PDOp::from_series(0, f.clone()), 0);
        assert_eq!(c.coeff(-1).unwrap(), &f);
        assert_eq!(alloc::format!("{}", c.coeff(-2).unwrap()), "-2*T1");
        assert_eq!(alloc::format!("{}", c.coeff(-3).unwrap()), "2");
        assert!(c.coeff(-4).unwrap().is_zero());
        assert!(c.coeff(0).unwrap().is_zero());
    }

    #[test]
    fn associativity_spot_check() {
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        let t1 = t_var(sp, cap, 0);
        let t2 = t_var(sp, cap, 1);
        let mut a = PDOp::dx_pow(sp, cap, 1);
        a.add_term(-1, &t1);
        let b = PDOp::from_series(2, t2.clone());
        let mut c = PDOp::dx_pow(sp, cap, -1);
        c.add_term(0, &(&t1 * &t1));
        let left = a.compose(&b, 0).compose(&c, 0);
        let right = a.compose(&b.compose(&c, 0), 0);
        assert_eq!(left, right);
    }

    #[test]
    fn square_root_of_dispersive_kdv() {
        // L = Dx^2 + 2 e^-2 T1; R = Dx + e^-2 T1 Dx^-1 − (e^-2/2) Dx^-2
        //     − (e^-4 T1^2 / 2) Dx^-3 + ...
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        let u = t_var(sp, cap, 0).scale(&EpsScalar::monomial(-2, Rational::from_int(2)));
        let mut l = PDOp::dx_pow(sp, cap, 2);
        l.add_term(0, &u);
        let root = l.rth_root(-3, 0).unwrap();
        assert_eq!(alloc::format!("{}", root.coeff(1).unwrap()), "1");
        assert!(root.coeff(0).unwrap().is_zero());
        assert_eq!(alloc::format!("{}", root.coeff(-1).unwrap()), "e^-2*T1");
        assert_eq!(alloc::format!("{}", root.coeff(-2).unwrap()), "-1/2*e^-2");
        assert_eq!(alloc::format!("{}", root.coeff(-3).unwrap()), "-1/2*e^-4*T1^2");

        // Squaring recovers L on the certified range.
        let sq = root.pow_trunc(2, 0, -3);
        assert!(sq.low() <= -2);
        assert_eq!(sq.coeff(2).unwrap(), l.coeff(2).unwrap());
        assert_eq!(sq.coeff(0).unwrap(), l.coeff(0).unwrap());
        assert!(sq.coeff(1).unwrap().is_zero());
        assert!(sq.coeff(-1).unwrap().is_zero());
        assert!(sq.coeff(-2).unwrap().is_zero());

        // Any perturbation of the root breaks the square: uniqueness.
        let mut bent = root.clone();
        bent.add_term(-2, &TSeries::one(sp, cap, one_eps()));
        let bad = bent.pow_trunc(2, 0, -3);
        assert_ne!(bad.coeff(-1).unwrap(), l.coeff(-1).unwrap());
    }

    #[test]
    fn commutator_of_plus_part() {
        // r=2 dispersionless shadow: [(L^(1/2))+, L] should have pure
        // Dx^0 leading content 0 at order eps^... the dispersive bracket
        // [(R)+, L] = [Dx, L] = dx(2 e^-2 T1) = 2 e^-2 at Dx^0.
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        let u = t_var(sp, cap, 0).scale(&EpsScalar::monomial(-2, Rational::from_int(2)));
        let mut l = PDOp::dx_pow(sp, cap, 2);
        l.add_term(0, &u);
        let root = l.rth_root(-3, 0).unwrap();
        let (plus, _) = root.split();
        let br = plus.commutator(&l, 0);
        assert_eq!(br.top(), Some(0));
        assert_eq!(alloc::format!("{}", br.coeff(0).unwrap()), "2*e^-2");
    }

    #[test]
    fn display_golden_form() {
        let sp = VarSpace::big_t(3, 1);
        let cap = 3;
        let u = t_var(sp, cap, 0).scale(&EpsScalar::monomial(-3, Rational::from_int(3)));
        let mut l = PDOp::dx_pow(sp, cap, 3);
        l.add_term(0, &u);
        assert_eq!(alloc::format!("{l}"), "Dx^3 + 3*e^-3*T1");
    }

    #[test]
    fn exponential_derivative_polynomials() {
        let sp = VarSpace::big_t(2, 2);
        let cap = 4;
        // theta = T1^2: B_1 = 2 T1, B_2 = 2 + 4 T1^2, B_3 = 12 T1 + 8 T1^3.
        let theta = &t_var(sp, cap, 0) * &t_var(sp, cap, 0);
        let b = bell_exponential(&theta, 0, 3);
        assert_eq!(alloc::format!("{}", b[0]), "1");
        assert_eq!(alloc::format!("{}", b[1]), "2*T1");
        assert_eq!(alloc::format!("{}", b[2]), "2 + 4*T1^2");
        assert_eq!(alloc::format!("{}", b[3]), "12*T1 + 8*T1^3");
    }
}
